#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amda/metrics.hpp"
#include "amda/trainer.hpp"

namespace amda {

/// One grid entry: a human-readable row label plus the full configuration
/// that produces it.
struct LabeledConfig {
  std::string label;
  TrainConfig config;
};

/// The eight training-regime rows: source-only, each transfer loss alone,
/// each pair, and the full objective.
std::vector<LabeledConfig> regime_grid(const TrainConfig& base);

/// The six discriminator-modality rows: none, textual, visual,
/// visual+textual, fused, and all three.
std::vector<LabeledConfig> discriminator_grid(const TrainConfig& base);

/// One row per swept value of `param` ("margin" or "mask-ratio").
std::vector<LabeledConfig> sweep_grid(const TrainConfig& base,
                                      const std::string& param,
                                      const std::vector<double>& values);

/// Default sweep axis {0.1, 0.2, 0.3, 0.4, 0.5} shared by both parameters.
std::vector<double> default_sweep_values();

/// Final-epoch evaluation of one (label, seed) run.
struct RunOutcome {
  std::string label;
  std::string regime;
  std::uint64_t seed = 0;
  std::string config_hash;
  MetricsReport source_test;
  MetricsReport target_test;
};

/// Median/min/max of one metric across the seeds of one row.
struct AggregateRow {
  std::string label;
  std::string domain; ///< "source" or "target"
  double threshold = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;

  bool operator==(const AggregateRow&) const = default;
};

/// Everything an experiment produced: the raw per-run reports and the
/// aggregation derived from them (recomputable from `runs`).
struct ExperimentResult {
  std::vector<RunOutcome> runs;
  std::vector<AggregateRow> aggregates;
};

/// Lower-median of a sample (mean of the two middle values when even).
double median_value(std::vector<double> values);

/// Recomputes the aggregate table from the raw run list.
std::vector<AggregateRow> aggregate_runs(const std::vector<RunOutcome>& runs);

/// Trains every (grid row, seed) pair on the corpus and persists results
/// under `out_dir`:
///   - events.jsonl  append-only JSON-lines event log
///   - results.csv   one row per (regime, seed, domain, metric)
///   - <label>-seed<k>.ckpt per run when `save_checkpoints` is set
/// Re-running an experiment whose hash already appears in the event log
/// throws ConfigError unless `force` is set.
ExperimentResult run_experiment(const std::string& kind,
                                const std::vector<LabeledConfig>& grid,
                                const std::string& corpus_dir,
                                const std::string& out_dir,
                                const std::vector<std::uint64_t>& seeds,
                                bool force, bool save_checkpoints = false);

/// Gradient-check outcome for one named operation.
struct OpCheck {
  std::string op;
  double max_rel_err = 0.0;
  bool passed = false;
};

/// Central finite-difference checks over every differentiable operation and
/// composite loss, `instances` random instances each. `tol` applies to all
/// entries except the full-model spot check, which uses 10 * tol.
std::vector<OpCheck> gradcheck_suite(std::size_t instances, double tol);

} // namespace amda
