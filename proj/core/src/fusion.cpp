#include "amda/fusion.hpp"

namespace amda {

namespace {

constexpr double kMaskBias = -1e9;

// Constant n x m matrix carrying -1e9 wherever the indicated axis position
// is padding.
Tensor axis_bias(std::size_t n, std::size_t m, const BoolMask& mask,
                 bool mask_rows) {
  Tensor b = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const bool invalid = mask_rows ? !mask[i] : !mask[j];
      if (invalid) b.values()[i * m + j] = kMaskBias;
    }
  }
  return b;
}

} // namespace

SimilarityMatrices similarity(const Tensor& video, const Tensor& query,
                              const BoolMask& video_valid,
                              const BoolMask& query_valid) {
  const std::size_t n = video.shape()[0];
  const std::size_t m = query.shape()[0];
  Tensor s = row_cosine_matrix(video, query, video_valid, query_valid);
  // Rows normalize over query positions; columns over video positions.
  Tensor s_r = softmax(add(s, axis_bias(n, m, query_valid, false)), 1);
  Tensor s_c = softmax(add(s, axis_bias(n, m, video_valid, true)), 0);
  return SimilarityMatrices{s, s_r, s_c};
}

CrossAttention context_query_attention(const Tensor& video, const Tensor& query,
                                       const SimilarityMatrices& sims) {
  Tensor a_v = matmul(sims.s_r, query);
  Tensor a_q = matmul(matmul(sims.s_r, transpose(sims.s_c)), video);
  return CrossAttention{a_v, a_q};
}

Tensor fuse(const Tensor& video, const CrossAttention& attn,
            const FusionParams& params, const BoolMask& video_valid) {
  Tensor cat = concat_cols(
      {video, attn.a_v, mul(video, attn.a_v), mul(video, attn.a_q)});
  if (cat.shape()[1] != params.w_f.shape()[0]) {
    throw DimensionError("fuse: concatenated width " +
                         std::to_string(cat.shape()[1]) +
                         " does not match fusing map " +
                         shape_string(params.w_f.shape()));
  }
  Tensor f = add(matmul(cat, params.w_f), params.b_f);
  return apply_row_mask(f, video_valid);
}

Tensor finalize(const Tensor& fused, const FusionParams& params,
                const BoolMask& video_valid, std::mt19937_64& rng,
                bool training) {
  return multi_head_self_attention(fused, params.final_layer, params.heads,
                                   video_valid, params.dropout_rate, rng,
                                   training);
}

} // namespace amda
