#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "amda/sequence.hpp"
#include "amda/tensor.hpp"

namespace amda {

/// One self-attention layer: query/key/value maps, output map (all d x d
/// weights with length-d biases).
struct AttentionLayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Per-modality encoder: input projection (feature_dim -> d) followed by a
/// stack of self-attention layers.
struct EncoderParams {
  Tensor proj_w, proj_b;
  std::vector<AttentionLayerParams> layers;
  std::size_t heads = 4;
  double dropout_rate = 0.0;
};

/// A video whose selected frames were replaced by the learned mask token.
struct MaskedVideo {
  FeatureSequence masked;
  BoolMask masked_positions;
  Tensor original; ///< the unmasked raw values, the reconstruction target
};

/// Zeroes the rows of h whose positions are invalid. Gradient-safe: zeroed
/// rows receive zero gradient.
Tensor apply_row_mask(const Tensor& h, const BoolMask& valid);

/// Per-position affine map into the hidden dimension; padding rows stay zero.
Tensor project(const FeatureSequence& x, const EncoderParams& params);

/// Scaled dot-product self-attention with `heads` heads (scale 1/sqrt(d/heads)),
/// key logits at invalid positions biased by -1e9 before the softmax, heads
/// concatenated and output-projected, residual added, dropout at train time,
/// padding rows re-zeroed.
Tensor multi_head_self_attention(const Tensor& h,
                                 const AttentionLayerParams& layer,
                                 std::size_t heads, const BoolMask& valid,
                                 double dropout_rate, std::mt19937_64& rng,
                                 bool training);

/// project -> dropout -> the layer stack. Deterministic in eval mode.
Tensor encode(const FeatureSequence& x, const EncoderParams& params,
              std::mt19937_64& rng, bool training);

/// Replaces exactly round(beta * n_valid) distinct valid frames (chosen
/// uniformly without replacement) by the learned mask token row.
MaskedVideo mask_video(const FeatureSequence& x, double beta,
                       const Tensor& mask_token, std::mt19937_64& rng);

} // namespace amda
