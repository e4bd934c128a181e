#include "amda/uda.hpp"

namespace amda {

namespace {

const MlpParams& pick(const DiscriminatorParams& params, FeatureKind kind) {
  switch (kind) {
    case FeatureKind::visual: return params.visual;
    case FeatureKind::textual: return params.textual;
    case FeatureKind::fused: return params.fused;
  }
  throw ConfigError("discriminate: unknown feature kind");
}

} // namespace

Tensor discriminate(const Tensor& feature, FeatureKind kind,
                    const DiscriminatorParams& params, const BoolMask& valid) {
  const MlpParams& mlp = pick(params, kind);
  Tensor pooled = masked_mean(feature, valid);
  Tensor rev = reshape(gradient_reversal(pooled, params.grl_weight),
                       {1, pooled.size()});
  Tensor hidden = relu(add(matmul(rev, mlp.w1), mlp.b1));
  Tensor prob = sigmoid(add(matmul(hidden, mlp.w2), mlp.b2));
  return reshape(prob, {1});
}

Tensor adversarial_loss(const std::vector<DomainTerm>& terms) {
  if (terms.empty()) {
    throw DegenerateInputError("adversarial_loss: empty batch");
  }
  std::vector<Tensor> probs;
  probs.reserve(terms.size());
  Tensor labels = Tensor::zeros({1, terms.size()});
  for (std::size_t i = 0; i < terms.size(); ++i) {
    probs.push_back(reshape(terms[i].probability, {1, 1}));
    labels.values()[i] = terms[i].label;
  }
  return bce_loss(concat_cols(probs), labels);
}

Tensor alignment_loss(const std::vector<Tensor>& video_pooled,
                      const std::vector<Tensor>& query_pooled, double margin) {
  const std::size_t b = video_pooled.size();
  if (b != query_pooled.size()) {
    throw DimensionError("alignment_loss: " + std::to_string(b) +
                         " video vs " + std::to_string(query_pooled.size()) +
                         " query vectors");
  }
  if (b < 2) {
    throw DegenerateInputError(
        "alignment_loss: batches below two samples have no negatives");
  }

  std::vector<Tensor> positive;
  positive.reserve(b);
  for (std::size_t i = 0; i < b; ++i)
    positive.push_back(cosine_similarity(video_pooled[i], query_pooled[i]));

  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      // Wrong video for query i, and wrong query for video i.
      Tensor neg_v = cosine_similarity(video_pooled[j], query_pooled[i]);
      Tensor neg_q = cosine_similarity(video_pooled[i], query_pooled[j]);
      total = add(total, relu(add(sub(neg_v, positive[i]), margin)));
      total = add(total, relu(add(sub(neg_q, positive[i]), margin)));
    }
  }
  return mul(total, 1.0 / static_cast<double>(b));
}

Tensor reconstruct(const Tensor& encoded_masked, const Tensor& fused_masked,
                   const ReconDecoderParams& params) {
  if (encoded_masked.shape() != fused_masked.shape()) {
    throw DimensionError("reconstruct: encoded " +
                         shape_string(encoded_masked.shape()) + " vs fused " +
                         shape_string(fused_masked.shape()));
  }
  Tensor mixed = add(encoded_masked, fused_masked);
  return conv1d(relu(conv1d(mixed, params.k1, params.b1)), params.k2,
                params.b2);
}

Tensor reconstruction_loss(const Tensor& reconstructed, const Tensor& original,
                           const BoolMask& valid) {
  return mse_loss_rows(reconstructed, original, valid);
}

Tensor mmd_loss(const Tensor& source_pooled, const Tensor& target_pooled) {
  if (source_pooled.shape()[0] == 0 || target_pooled.shape()[0] == 0) {
    throw DegenerateInputError("mmd_loss: empty batch");
  }
  BoolMask all_s(source_pooled.shape()[0], 1);
  BoolMask all_t(target_pooled.shape()[0], 1);
  Tensor diff = sub(masked_mean(source_pooled, all_s),
                    masked_mean(target_pooled, all_t));
  return sum(mul(diff, diff));
}

namespace {

Tensor covariance(const Tensor& batch) {
  const std::size_t b = batch.shape()[0];
  BoolMask all(b, 1);
  Tensor centered = sub(batch, masked_mean(batch, all));
  return mul(matmul(transpose(centered), centered),
             1.0 / static_cast<double>(b - 1));
}

} // namespace

Tensor coral_loss(const Tensor& source_pooled, const Tensor& target_pooled) {
  if (source_pooled.shape()[0] < 2 || target_pooled.shape()[0] < 2) {
    throw DegenerateInputError(
        "coral_loss: covariance needs at least two samples per batch");
  }
  if (source_pooled.shape()[1] != target_pooled.shape()[1]) {
    throw DimensionError("coral_loss: feature dims differ, " +
                         shape_string(source_pooled.shape()) + " vs " +
                         shape_string(target_pooled.shape()));
  }
  const double d = static_cast<double>(source_pooled.shape()[1]);
  Tensor diff = sub(covariance(source_pooled), covariance(target_pooled));
  return mul(sum(mul(diff, diff)), 1.0 / (4.0 * d * d));
}

} // namespace amda
