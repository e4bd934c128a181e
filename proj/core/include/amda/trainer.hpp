#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "amda/checkpoint.hpp"
#include "amda/configfile.hpp"
#include "amda/corpus.hpp"
#include "amda/metrics.hpp"
#include "amda/model.hpp"

namespace amda {

/// Which objective combination a run optimizes. Every regime keeps the
/// supervised grounding loss; the rest toggle the three transfer losses or
/// swap in a distribution-statistic baseline.
enum class Regime {
  amda,
  source_only,
  supervised_target,
  target_only,
  mmd,
  coral,
  adv_only,
  align_only,
  recon_only,
  adv_align,
  adv_recon,
  align_recon,
};

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);
std::vector<Regime> all_regimes();

bool regime_uses_adversarial(Regime r);
bool regime_uses_alignment(Regime r);
bool regime_uses_reconstruction(Regime r);
bool regime_uses_statistic(Regime r); ///< mmd / coral baselines
bool regime_uses_target_labels(Regime r);

struct TrainConfig {
  // objective
  double lambda_adv = 0.5;
  double lambda_align = 0.2;
  double lambda_recon = 0.5;
  double margin = 0.3;
  double mask_ratio = 0.2;
  Regime regime = Regime::amda;
  bool disc_visual = true;
  bool disc_textual = true;
  bool disc_fused = true;

  // architecture
  std::size_t hidden_dim = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  double dropout_rate = 0.4;
  double grl_weight = 1.0;

  // optimization
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double lr_min = 0.0;
  double weight_decay = 1e-6;
  std::uint64_t seed = 1;

  /// Reads keys from the [train] section; missing keys keep the desk-scale
  /// defaults above, or the full-scale defaults (d=256, B=64, 50 epochs)
  /// when `train.paper_scale = true`.
  static TrainConfig from_config(const ConfigFile& cfg);
  ConfigFile to_config() const;
  void validate() const;
  ModelConfig model_config(std::size_t visual_dim,
                           std::size_t text_dim) const;
};

/// Scalar values of one step's loss components; disabled components are
/// exactly zero.
struct LossBreakdown {
  double sup = 0.0;
  double adv = 0.0;
  double align = 0.0;
  double recon = 0.0;
  double total = 0.0;
};

/// total = sup + l1*adv + l2*align + l3*recon on the active tape, with each
/// lambda forced to exactly zero when the regime disables its component.
/// Non-finite components abort with the component's name.
Tensor total_loss(const Tensor& sup, const Tensor& adv, const Tensor& align,
                  const Tensor& recon, const TrainConfig& cfg);

/// First/second moment estimates aligned with named_parameters order.
struct OptimizerState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer(
    const std::vector<std::pair<std::string, Tensor>>& params);

/// Decoupled-decay update: theta -= lr * mhat / (sqrt(vhat) + eps)
///                               + lr * weight_decay * theta,
/// with bias-corrected moments. Parameters without gradients receive the
/// pure-decay update, so a zero-weighted loss and a skipped loss produce
/// identical steps.
void adamw_step(std::vector<std::pair<std::string, Tensor>>& params,
                OptimizerState& state, double lr, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2.
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max,
                 double lr_min = 0.0);

/// One optimization step over a paired batch: forwards gated by the regime,
/// a single backward through the composed loss, one optimizer update over
/// all parameters. `batch.source` is the labeled side.
LossBreakdown train_step(const DomainBatch& batch, ModelParams& model,
                         OptimizerState& opt, const TrainConfig& cfg,
                         double lr, std::uint64_t global_step);

struct EpochMetrics {
  std::size_t epoch = 0;
  LossBreakdown mean_losses;
  double median_recon = 0.0; ///< median over the epoch's batches
  MetricsReport source_test;
  MetricsReport target_test;
};

struct TrainResult {
  ModelParams model;
  OptimizerState opt;
  TrainConfig config;
  ConfigFile config_echo; ///< cfg plus the corpus dimensions
  std::vector<EpochMetrics> history;
};

/// Full run: load splits per regime, train epochs x batches with a cosine
/// schedule, evaluate both domains' test splits after every epoch, and
/// persist the final checkpoint when `checkpoint_path` is nonempty.
TrainResult train(const std::string& corpus_dir, const TrainConfig& cfg,
                  const std::string& checkpoint_path = "");

/// Converts a finished (or initialized) run into checkpoint contents.
CheckpointData to_checkpoint(ModelParams& model, const OptimizerState& opt,
                             const ConfigFile& config_echo,
                             std::uint64_t epoch, std::uint64_t seed);

struct RestoredRun {
  ModelParams model;
  OptimizerState opt;
  TrainConfig config;
  ConfigFile config_echo;
  std::uint64_t epoch = 0;
};

RestoredRun restore_run(const CheckpointData& data);

} // namespace amda
