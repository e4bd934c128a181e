#include "amda/grounding.hpp"

#include <algorithm>

namespace amda {

namespace {

// Two affine layers with a ReLU between, mapping n x d -> n x d.
Tensor tower(const Tensor& x, const Tensor& w1, const Tensor& b1,
             const Tensor& w2, const Tensor& b2) {
  return add(matmul(relu(add(matmul(x, w1), b1)), w2), b2);
}

} // namespace

BoolMask upper_triangle_mask(std::size_t n) {
  BoolMask m(n * n, 0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t e = s; e < n; ++e) m[s * n + e] = 1;
  return m;
}

ScoreMap score_map(const Tensor& features, const PredictorParams& params) {
  const std::size_t n = features.shape()[0];

  Tensor rs = tower(features, params.start_w1, params.start_b1,
                    params.start_w2, params.start_b2);
  Tensor re = tower(features, params.end_w1, params.end_b1, params.end_w2,
                    params.end_b2);

  Tensor bilinear = matmul(matmul(rs, params.u), transpose(re));

  // Linear terms spread over rows/columns, and the trainable scalar bias
  // spread over the whole map, all via constant ones factors so the tape
  // carries their gradients.
  const std::size_t d = params.w.size();
  Tensor w_col = reshape(params.w, {d, 1});
  Tensor ones_row = Tensor::full({1, n}, 1.0);
  Tensor ones_col = Tensor::full({n, 1}, 1.0);
  Tensor start_term = matmul(matmul(rs, w_col), ones_row);
  Tensor end_term = transpose(matmul(matmul(re, w_col), ones_row));
  Tensor bias_term =
      matmul(matmul(ones_col, reshape(params.bias, {1, 1})), ones_row);

  Tensor logits = add(add(add(bilinear, start_term), end_term), bias_term);
  Tensor probs = sigmoid(logits);

  // Zero the lower triangle (end < start) exactly.
  Tensor upper = Tensor::zeros({n, n});
  const BoolMask tri = upper_triangle_mask(n);
  for (std::size_t i = 0; i < n * n; ++i)
    if (tri[i]) upper.values()[i] = 1.0;
  return ScoreMap{mul(probs, upper)};
}

double temporal_iou(const TemporalBoundary& p, const TemporalBoundary& q) {
  const std::size_t lo = std::max(p.start_frame, q.start_frame);
  const std::size_t hi = std::min(p.end_frame, q.end_frame);
  if (hi < lo) return 0.0;
  const double inter = static_cast<double>(hi - lo + 1);
  const double len_p = static_cast<double>(p.end_frame - p.start_frame + 1);
  const double len_q = static_cast<double>(q.end_frame - q.start_frame + 1);
  return inter / (len_p + len_q - inter);
}

Tensor scaled_iou_targets(const TemporalBoundary& gt, std::size_t n) {
  if (gt.end_frame >= n) {
    throw DimensionError("scaled_iou_targets: boundary end " +
                         std::to_string(gt.end_frame) + " outside a " +
                         std::to_string(n) + "-frame video");
  }
  Tensor t = Tensor::zeros({n, n});
  double max_iou = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t e = s; e < n; ++e) {
      const double v = temporal_iou({s, e}, gt);
      t.values()[s * n + e] = v;
      max_iou = std::max(max_iou, v);
    }
  }
  // gt itself is a valid cell, so max_iou is 1; dividing keeps the contract
  // explicit for any future off-grid targets.
  for (double& v : t.values()) v /= max_iou;
  return t;
}

Tensor supervised_loss(const ScoreMap& map, const Tensor& targets) {
  if (map.scores.shape() != targets.shape()) {
    throw DimensionError("supervised_loss: score map " +
                         shape_string(map.scores.shape()) + " vs targets " +
                         shape_string(targets.shape()));
  }
  return bce_loss(map.scores, targets, upper_triangle_mask(map.n_frames()));
}

TemporalBoundary infer_boundary(const ScoreMap& map) {
  const std::size_t n = map.n_frames();
  TemporalBoundary best{0, 0};
  double best_score = -1.0;
  // Row-major scan with a strict comparison realizes the (start, end)
  // lexicographic tie-break.
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t e = s; e < n; ++e) {
      const double v = map.scores.at(s, e);
      if (v > best_score) {
        best_score = v;
        best = {s, e};
      }
    }
  }
  return best;
}

} // namespace amda
