#include "amda/encoder.hpp"

#include <cmath>

#include "amda/rng.hpp"

namespace amda {

namespace {

constexpr double kMaskBias = -1e9;

// Constant (non-differentiable) n x d matrix with 1-rows at valid positions.
Tensor row_mask_matrix(std::size_t n, std::size_t d, const BoolMask& valid) {
  Tensor m = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    for (std::size_t j = 0; j < d; ++j) m.values()[i * d + j] = 1.0;
  }
  return m;
}

} // namespace

Tensor apply_row_mask(const Tensor& h, const BoolMask& valid) {
  if (valid.size() != h.shape()[0]) {
    throw DimensionError("apply_row_mask: mask length " +
                         std::to_string(valid.size()) + " vs " +
                         std::to_string(h.shape()[0]) + " rows");
  }
  return mul(h, row_mask_matrix(h.shape()[0], h.shape()[1], valid));
}

Tensor project(const FeatureSequence& x, const EncoderParams& params) {
  if (x.dim() != params.proj_w.shape()[0]) {
    throw ConfigError("project: input feature dimension " +
                      std::to_string(x.dim()) + " does not match projection " +
                      shape_string(params.proj_w.shape()));
  }
  Tensor h = add(matmul(x.values, params.proj_w), params.proj_b);
  return apply_row_mask(h, x.valid);
}

Tensor multi_head_self_attention(const Tensor& h,
                                 const AttentionLayerParams& layer,
                                 std::size_t heads, const BoolMask& valid,
                                 double dropout_rate, std::mt19937_64& rng,
                                 bool training) {
  const std::size_t n = h.shape()[0];
  const std::size_t d = h.shape()[1];
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multi_head_self_attention: hidden dim " +
                      std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = add(matmul(h, layer.wq), layer.bq);
  Tensor k = add(matmul(h, layer.wk), layer.bk);
  Tensor v = add(matmul(h, layer.wv), layer.bv);

  // Row vector of key biases: 0 at valid keys, -1e9 at padding. Broadcast
  // over query rows, it removes padded keys from every softmax.
  Tensor key_bias = Tensor::zeros({n});
  for (std::size_t j = 0; j < n; ++j)
    if (!valid[j]) key_bias.values()[j] = kMaskBias;

  std::vector<Tensor> contexts;
  contexts.reserve(heads);
  for (std::size_t head = 0; head < heads; ++head) {
    Tensor qh = slice_cols(q, head * dh, (head + 1) * dh);
    Tensor kh = slice_cols(k, head * dh, (head + 1) * dh);
    Tensor vh = slice_cols(v, head * dh, (head + 1) * dh);
    Tensor logits = add(mul(matmul(qh, transpose(kh)), scale), key_bias);
    Tensor attn = softmax(logits, 1);
    contexts.push_back(matmul(attn, vh));
  }

  Tensor out = add(matmul(concat_cols(contexts), layer.wo), layer.bo);
  Tensor y = dropout(add(h, out), dropout_rate, rng, training);
  return apply_row_mask(y, valid);
}

Tensor encode(const FeatureSequence& x, const EncoderParams& params,
              std::mt19937_64& rng, bool training) {
  Tensor h = dropout(project(x, params), params.dropout_rate, rng, training);
  for (const AttentionLayerParams& layer : params.layers) {
    h = multi_head_self_attention(h, layer, params.heads, x.valid,
                                  params.dropout_rate, rng, training);
  }
  return h;
}

MaskedVideo mask_video(const FeatureSequence& x, double beta,
                       const Tensor& mask_token, std::mt19937_64& rng) {
  if (x.modality != Modality::visual) {
    throw ConfigError("mask_video: expects a visual sequence");
  }
  if (!(beta > 0.0 && beta < 1.0)) {
    throw ConfigError("mask_video: mask ratio must lie in (0,1), got " +
                      std::to_string(beta));
  }
  if (mask_token.rank() != 1 || mask_token.size() != x.dim()) {
    throw DimensionError("mask_video: mask token of shape " +
                         shape_string(mask_token.shape()) +
                         " does not match feature dimension " +
                         std::to_string(x.dim()));
  }

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < x.valid.size(); ++i)
    if (x.valid[i]) candidates.push_back(i);

  const std::size_t count = static_cast<std::size_t>(
      std::llround(beta * static_cast<double>(candidates.size())));
  if (count == 0) {
    throw DegenerateInputError(
        "mask_video: round(beta * n_valid) is zero; nothing to mask");
  }

  // Partial Fisher-Yates: the first `count` entries are a uniform draw
  // without replacement.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(bounded_uint(rng, candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }

  const std::size_t n = x.length(), fd = x.dim();
  BoolMask masked_positions(n, 0);
  for (std::size_t i = 0; i < count; ++i) masked_positions[candidates[i]] = 1;

  // masked = x ⊙ keep + sel · token, built on the tape so the learned token
  // receives gradient.
  Tensor keep = Tensor::full({n, fd}, 1.0);
  Tensor sel_col = Tensor::zeros({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    if (!masked_positions[i]) continue;
    sel_col.values()[i] = 1.0;
    for (std::size_t j = 0; j < fd; ++j) keep.values()[i * fd + j] = 0.0;
  }
  Tensor masked_values =
      add(mul(x.values, keep), matmul(sel_col, reshape(mask_token, {1, fd})));

  FeatureSequence masked{masked_values, x.valid, Modality::visual};
  return MaskedVideo{std::move(masked), std::move(masked_positions), x.values};
}

} // namespace amda
