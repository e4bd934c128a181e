#pragma once

#include <random>

#include "amda/encoder.hpp"
#include "amda/tensor.hpp"

namespace amda {

/// Raw and normalized cross-modal similarities between n video frames and
/// m query tokens.
struct SimilarityMatrices {
  Tensor s;   ///< n x m cosine similarities
  Tensor s_r; ///< row-normalized (softmax over query positions)
  Tensor s_c; ///< column-normalized (softmax over video positions)
};

/// Fusion parameters: the 4d -> d fusing map plus one self-attention layer
/// producing the final representation.
struct FusionParams {
  Tensor w_f, b_f;
  AttentionLayerParams final_layer;
  std::size_t heads = 4;
  double dropout_rate = 0.0;
};

/// S[i,j] = cosine(video[i], query[j]); padded positions are biased to -1e9
/// before the respective softmax so they receive zero attention.
SimilarityMatrices similarity(const Tensor& video, const Tensor& query,
                              const BoolMask& video_valid,
                              const BoolMask& query_valid);

/// Video-to-query attention A_v = S_r * Q and query-to-video attention
/// A_q = S_r * S_c^T * V; both shaped (n, d).
struct CrossAttention {
  Tensor a_v, a_q;
};
CrossAttention context_query_attention(const Tensor& video, const Tensor& query,
                                       const SimilarityMatrices& sims);

/// F = concat[V; A_v; V .* A_v; V .* A_q] * W_f + b_f, padding rows re-zeroed.
Tensor fuse(const Tensor& video, const CrossAttention& attn,
            const FusionParams& params, const BoolMask& video_valid);

/// One self-attention layer over F with the video mask, yielding the final
/// representation.
Tensor finalize(const Tensor& fused, const FusionParams& params,
                const BoolMask& video_valid, std::mt19937_64& rng,
                bool training);

} // namespace amda
