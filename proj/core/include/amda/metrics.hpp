#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amda/corpus.hpp"
#include "amda/model.hpp"
#include "amda/sequence.hpp"

namespace amda {

/// Recall figures for one (model, split) evaluation: recall.at(i) is the
/// percentage of samples whose predicted segment overlaps the ground truth
/// with IoU strictly greater than thresholds[i].
struct MetricsReport {
  std::vector<double> thresholds;
  std::vector<double> recall; ///< percentages in [0, 100]
  std::size_t sample_count = 0;
  std::string domain;
  std::string regime;
  std::uint64_t seed = 0;
  std::string config_hash;

  double recall_at(double threshold) const;
};

/// Percentage of samples whose prediction exceeds IoU `threshold` with its
/// ground truth (strict inequality).
double recall_at_iou(const std::vector<TemporalBoundary>& predictions,
                     const std::vector<TemporalBoundary>& ground_truths,
                     double threshold);

/// Deterministic eval-mode pass over the samples: forward without dropout
/// or masking, decode one segment each, then recall at every threshold.
/// Samples must carry boundaries (eval access).
MetricsReport evaluate_model(const ModelParams& model,
                             const std::vector<const LoadedSample*>& samples,
                             const std::vector<double>& thresholds);

/// Predicted segment for one sample at eval time.
TemporalBoundary predict_boundary(const ModelParams& model,
                                  const LoadedSample& sample);

} // namespace amda
