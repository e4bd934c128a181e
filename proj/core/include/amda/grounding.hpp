#pragma once

#include <cstddef>

#include "amda/sequence.hpp"
#include "amda/tensor.hpp"

namespace amda {

/// Matching scores for all (start, end) segments of an n-frame video.
/// Valid entries (start <= end) lie in (0,1); the lower triangle is
/// exactly 0 and excluded from loss and inference.
struct ScoreMap {
  Tensor scores; ///< n x n
  std::size_t n_frames() const { return scores.shape()[0]; }
};

/// Biaffine predictor: start/end feed-forward towers (two affine layers
/// with a ReLU between), bilinear form U, linear term W applied to the sum
/// of the two representations, and a scalar bias.
struct PredictorParams {
  Tensor start_w1, start_b1, start_w2, start_b2;
  Tensor end_w1, end_b1, end_w2, end_b2;
  Tensor u;    ///< d x d bilinear form
  Tensor w;    ///< length-d linear term
  Tensor bias; ///< shape-[1] scalar
};

/// score(p_s, p_e) = sigmoid(r_s[p_s] U r_e[p_e]^T + (r_s[p_s]+r_e[p_e]) W + b)
/// for p_s <= p_e; the lower triangle is zeroed.
ScoreMap score_map(const Tensor& features, const PredictorParams& params);

/// IoU of two segments as closed frame intervals (|[a,b]| = b - a + 1).
double temporal_iou(const TemporalBoundary& p, const TemporalBoundary& q);

/// Supervision map: IoU(p, gt) normalized by the maximum IoU over all valid
/// segments, so the ground-truth cell carries exactly 1. Constant tensor
/// (no gradient); lower triangle 0.
Tensor scaled_iou_targets(const TemporalBoundary& gt, std::size_t n_frames);

/// Mean binary cross-entropy over upper-triangle cells.
Tensor supervised_loss(const ScoreMap& map, const Tensor& targets);

/// Argmax over the upper triangle; ties break to the smallest start, then
/// the smallest end.
TemporalBoundary infer_boundary(const ScoreMap& map);

/// Entry mask selecting the upper triangle (start <= end) of an n x n map.
BoolMask upper_triangle_mask(std::size_t n_frames);

} // namespace amda
