#include "amda/metrics.hpp"

#include <algorithm>

#include "amda/rng.hpp"

namespace amda {

double MetricsReport::recall_at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == threshold) return recall[i];
  }
  throw ConfigError("metrics report has no threshold " +
                    std::to_string(threshold));
}

double recall_at_iou(const std::vector<TemporalBoundary>& predictions,
                     const std::vector<TemporalBoundary>& ground_truths,
                     double threshold) {
  if (predictions.size() != ground_truths.size()) {
    throw DimensionError("recall_at_iou: " +
                         std::to_string(predictions.size()) +
                         " predictions vs " +
                         std::to_string(ground_truths.size()) +
                         " ground truths");
  }
  if (predictions.empty()) {
    throw DegenerateInputError("recall_at_iou: empty sample list");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (temporal_iou(predictions[i], ground_truths[i]) > threshold) ++hits;
  }
  return 100.0 * static_cast<double>(hits) /
         static_cast<double>(predictions.size());
}

TemporalBoundary predict_boundary(const ModelParams& model,
                                  const LoadedSample& sample) {
  FeatureSequence video = FeatureSequence::make(
      sample.visual, BoolMask(sample.visual.shape()[0], 1), Modality::visual);
  FeatureSequence query = FeatureSequence::make(
      sample.query, BoolMask(sample.query.shape()[0], 1), Modality::textual);
  auto rng = make_rng(0); // unused: eval mode draws nothing
  SampleForward fwd =
      forward_grounding(model, video, query, rng, /*training=*/false);
  return infer_boundary(fwd.map);
}

MetricsReport evaluate_model(const ModelParams& model,
                             const std::vector<const LoadedSample*>& samples,
                             const std::vector<double>& thresholds) {
  if (samples.empty()) {
    throw DegenerateInputError("evaluate_model: empty sample list");
  }
  std::vector<TemporalBoundary> predictions, truths;
  predictions.reserve(samples.size());
  truths.reserve(samples.size());
  for (const LoadedSample* s : samples) {
    if (!s->boundary.has_value()) {
      throw AccessViolationError(
          "evaluate_model: sample " + std::to_string(s->id) +
          " carries no boundary; load the split with eval access");
    }
    predictions.push_back(predict_boundary(model, *s));
    truths.push_back(*s->boundary);
  }
  MetricsReport report;
  report.thresholds = thresholds;
  report.sample_count = samples.size();
  for (double m : thresholds) {
    report.recall.push_back(recall_at_iou(predictions, truths, m));
  }
  return report;
}

} // namespace amda
