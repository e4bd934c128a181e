#include "amda/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "amda/rng.hpp"

namespace amda {

namespace {

// Stream tags: every stochastic consumer draws from its own generator
// derived from (seed, tag, global step, slot), so disabling one loss never
// shifts the draws of another.
constexpr std::uint64_t kRngSupSource = 0x51;
constexpr std::uint64_t kRngSupTarget = 0x52;
constexpr std::uint64_t kRngTargetForward = 0x53;
constexpr std::uint64_t kRngMaskedSource = 0x54;
constexpr std::uint64_t kRngMaskedTarget = 0x55;
constexpr std::uint64_t kRngBatchOrder = 0x56;

const std::vector<double> kEvalThresholds = {0.3, 0.5, 0.7};

FeatureSequence video_seq(const LoadedSample& s) {
  return FeatureSequence::make(s.visual, BoolMask(s.visual.shape()[0], 1),
                               Modality::visual);
}

FeatureSequence query_seq(const LoadedSample& s) {
  return FeatureSequence::make(s.query, BoolMask(s.query.shape()[0], 1),
                               Modality::textual);
}

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return mul(acc, 1.0 / static_cast<double>(terms.size()));
}

/// Stacks pooled length-d vectors into a (B, d) matrix on the tape.
Tensor stack_rows(const std::vector<Tensor>& pooled) {
  std::vector<Tensor> cols;
  cols.reserve(pooled.size());
  for (const Tensor& p : pooled) cols.push_back(reshape(p, {p.size(), 1}));
  return transpose(concat_cols(cols));
}

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return (values[(n - 1) / 2] + values[n / 2]) / 2.0;
}

} // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::amda: return "amda";
    case Regime::source_only: return "source-only";
    case Regime::supervised_target: return "supervised-target";
    case Regime::target_only: return "target-only";
    case Regime::mmd: return "mmd";
    case Regime::coral: return "coral";
    case Regime::adv_only: return "adv-only";
    case Regime::align_only: return "align-only";
    case Regime::recon_only: return "recon-only";
    case Regime::adv_align: return "adv+align";
    case Regime::adv_recon: return "adv+recon";
    case Regime::align_recon: return "align+recon";
  }
  throw ConfigError("unknown regime value");
}

Regime regime_from_string(const std::string& s) {
  for (Regime r : all_regimes()) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown regime '" + s + "'");
}

std::vector<Regime> all_regimes() {
  return {Regime::amda,       Regime::source_only, Regime::supervised_target,
          Regime::target_only, Regime::mmd,         Regime::coral,
          Regime::adv_only,   Regime::align_only,  Regime::recon_only,
          Regime::adv_align,  Regime::adv_recon,   Regime::align_recon};
}

bool regime_uses_adversarial(Regime r) {
  return r == Regime::amda || r == Regime::adv_only || r == Regime::adv_align ||
         r == Regime::adv_recon;
}

bool regime_uses_alignment(Regime r) {
  return r == Regime::amda || r == Regime::align_only ||
         r == Regime::adv_align || r == Regime::align_recon;
}

bool regime_uses_reconstruction(Regime r) {
  return r == Regime::amda || r == Regime::recon_only ||
         r == Regime::adv_recon || r == Regime::align_recon;
}

bool regime_uses_statistic(Regime r) {
  return r == Regime::mmd || r == Regime::coral;
}

bool regime_uses_target_labels(Regime r) {
  return r == Regime::supervised_target || r == Regime::target_only;
}

TrainConfig TrainConfig::from_config(const ConfigFile& cfg) {
  TrainConfig t;
  if (cfg.get_bool("train.paper_scale", false)) {
    t.hidden_dim = 256;
    t.batch_size = 64;
    t.epochs = 50;
  }
  t.lambda_adv = cfg.get_double("train.lambda_adv", t.lambda_adv);
  t.lambda_align = cfg.get_double("train.lambda_align", t.lambda_align);
  t.lambda_recon = cfg.get_double("train.lambda_recon", t.lambda_recon);
  t.margin = cfg.get_double("train.margin", t.margin);
  t.mask_ratio = cfg.get_double("train.mask_ratio", t.mask_ratio);
  t.regime =
      regime_from_string(cfg.get_string("train.regime", to_string(t.regime)));
  t.disc_visual = cfg.get_bool("train.disc_visual", t.disc_visual);
  t.disc_textual = cfg.get_bool("train.disc_textual", t.disc_textual);
  t.disc_fused = cfg.get_bool("train.disc_fused", t.disc_fused);
  t.hidden_dim = static_cast<std::size_t>(
      cfg.get_int("train.hidden_dim", static_cast<long long>(t.hidden_dim)));
  t.heads = static_cast<std::size_t>(
      cfg.get_int("train.heads", static_cast<long long>(t.heads)));
  t.encoder_layers = static_cast<std::size_t>(cfg.get_int(
      "train.encoder_layers", static_cast<long long>(t.encoder_layers)));
  t.dropout_rate = cfg.get_double("train.dropout", t.dropout_rate);
  t.grl_weight = cfg.get_double("train.grl_weight", t.grl_weight);
  t.batch_size = static_cast<std::size_t>(
      cfg.get_int("train.batch_size", static_cast<long long>(t.batch_size)));
  t.epochs = static_cast<std::size_t>(
      cfg.get_int("train.epochs", static_cast<long long>(t.epochs)));
  t.learning_rate = cfg.get_double("train.learning_rate", t.learning_rate);
  t.lr_min = cfg.get_double("train.lr_min", t.lr_min);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  const long long seed = cfg.get_int("train.seed", 1);
  if (seed < 0) {
    throw ConfigError("train.seed must be non-negative");
  }
  t.seed = static_cast<std::uint64_t>(seed);
  t.validate();
  return t;
}

ConfigFile TrainConfig::to_config() const {
  ConfigFile cfg;
  cfg.set_double("train.lambda_adv", lambda_adv);
  cfg.set_double("train.lambda_align", lambda_align);
  cfg.set_double("train.lambda_recon", lambda_recon);
  cfg.set_double("train.margin", margin);
  cfg.set_double("train.mask_ratio", mask_ratio);
  cfg.set("train.regime", to_string(regime));
  cfg.set_bool("train.disc_visual", disc_visual);
  cfg.set_bool("train.disc_textual", disc_textual);
  cfg.set_bool("train.disc_fused", disc_fused);
  cfg.set_int("train.hidden_dim", static_cast<long long>(hidden_dim));
  cfg.set_int("train.heads", static_cast<long long>(heads));
  cfg.set_int("train.encoder_layers", static_cast<long long>(encoder_layers));
  cfg.set_double("train.dropout", dropout_rate);
  cfg.set_double("train.grl_weight", grl_weight);
  cfg.set_int("train.batch_size", static_cast<long long>(batch_size));
  cfg.set_int("train.epochs", static_cast<long long>(epochs));
  cfg.set_double("train.learning_rate", learning_rate);
  cfg.set_double("train.lr_min", lr_min);
  cfg.set_double("train.weight_decay", weight_decay);
  cfg.set_int("train.seed", static_cast<long long>(seed));
  return cfg;
}

void TrainConfig::validate() const {
  if (lambda_adv < 0.0 || lambda_align < 0.0 || lambda_recon < 0.0) {
    throw ConfigError("train: loss weights must be non-negative");
  }
  if (!(margin > 0.0 && margin < 2.0)) {
    throw ConfigError("train: margin must lie in (0, 2), got " +
                      std::to_string(margin));
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw ConfigError("train: mask_ratio must lie in (0, 1), got " +
                      std::to_string(mask_ratio));
  }
  if (batch_size == 0) {
    throw ConfigError("train: batch_size must be positive");
  }
  if (regime_uses_alignment(regime) && batch_size < 2) {
    throw ConfigError(
        "train: the alignment loss needs batch_size >= 2 for negatives");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (lr_min < 0.0 || lr_min > learning_rate) {
    throw ConfigError("train: lr_min must lie in [0, learning_rate]");
  }
  if (weight_decay < 0.0) {
    throw ConfigError("train: weight_decay must be non-negative");
  }
  ModelConfig probe;
  probe.visual_dim = 1;
  probe.text_dim = 1;
  probe.hidden_dim = hidden_dim;
  probe.heads = heads;
  probe.encoder_layers = encoder_layers;
  probe.dropout_rate = dropout_rate;
  probe.grl_weight = grl_weight;
  probe.validate();
}

ModelConfig TrainConfig::model_config(std::size_t visual_dim,
                                      std::size_t text_dim) const {
  ModelConfig m;
  m.visual_dim = visual_dim;
  m.text_dim = text_dim;
  m.hidden_dim = hidden_dim;
  m.heads = heads;
  m.encoder_layers = encoder_layers;
  m.dropout_rate = dropout_rate;
  m.grl_weight = grl_weight;
  return m;
}

Tensor total_loss(const Tensor& sup, const Tensor& adv, const Tensor& align,
                  const Tensor& recon, const TrainConfig& cfg) {
  auto check = [](const Tensor& t, const char* name) {
    if (!std::isfinite(t.item())) {
      throw NumericError(std::string("total_loss: non-finite ") + name +
                         " component");
    }
  };
  check(sup, "supervised");
  check(adv, "adversarial");
  check(align, "alignment");
  check(recon, "reconstruction");

  const bool adv_on = regime_uses_adversarial(cfg.regime) ||
                      regime_uses_statistic(cfg.regime);
  const double l1 = adv_on ? cfg.lambda_adv : 0.0;
  const double l2 = regime_uses_alignment(cfg.regime) ? cfg.lambda_align : 0.0;
  const double l3 =
      regime_uses_reconstruction(cfg.regime) ? cfg.lambda_recon : 0.0;
  Tensor out = add(sup, mul(adv, l1));
  out = add(out, mul(align, l2));
  out = add(out, mul(recon, l3));
  return out;
}

OptimizerState make_optimizer(
    const std::vector<std::pair<std::string, Tensor>>& params) {
  OptimizerState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& [name, t] : params) {
    state.m.emplace_back(t.size(), 0.0);
    state.v.emplace_back(t.size(), 0.0);
  }
  return state;
}

void adamw_step(std::vector<std::pair<std::string, Tensor>>& params,
                OptimizerState& state, double lr, double weight_decay,
                double beta1, double beta2, double eps) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adamw_step: optimizer state tracks " +
                         std::to_string(state.m.size()) +
                         " parameters, model has " +
                         std::to_string(params.size()));
  }
  ++state.step;
  const double bc1 =
      1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 =
      1.0 - std::pow(beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    std::vector<double>& value = t.node()->value;
    const std::vector<double>& grad = t.grad();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    if (m.size() != value.size()) {
      throw DimensionError("adamw_step: moment shape mismatch for '" + name +
                           "'");
    }
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      if (!std::isfinite(g)) {
        throw NumericError("adamw_step: non-finite gradient for parameter '" +
                           name + "'");
      }
      m[j] = beta1 * m[j] + (1.0 - beta1) * g;
      v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      value[j] = value[j] - lr * (mhat / (std::sqrt(vhat) + eps)) -
                 lr * weight_decay * value[j];
    }
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max,
                 double lr_min) {
  if (total_steps == 0 || step > total_steps) {
    throw ConfigError("cosine_lr: step " + std::to_string(step) +
                      " outside schedule of " + std::to_string(total_steps) +
                      " steps");
  }
  const double phase = 3.14159265358979323846 * static_cast<double>(step) /
                       static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

LossBreakdown train_step(const DomainBatch& batch, ModelParams& model,
                         OptimizerState& opt, const TrainConfig& cfg,
                         double lr, std::uint64_t global_step) {
  const bool any_disc = cfg.disc_visual || cfg.disc_textual || cfg.disc_fused;
  const bool use_adv = regime_uses_adversarial(cfg.regime) && any_disc;
  const bool use_align = regime_uses_alignment(cfg.regime);
  const bool use_recon = regime_uses_reconstruction(cfg.regime);
  const bool use_stat = regime_uses_statistic(cfg.regime);
  const bool use_target_side = use_adv || use_align || use_stat ||
                               cfg.regime == Regime::supervised_target;
  const bool use_masked =
      use_recon || (use_adv && (cfg.disc_visual || cfg.disc_fused));

  Tape tape;
  TapeScope scope(tape);

  struct Forwarded {
    FeatureSequence video, query;
    SampleForward fwd;
  };

  auto run_forward = [&](const LoadedSample& s, std::uint64_t tag,
                         std::uint64_t slot) {
    Forwarded f{video_seq(s), query_seq(s), {}};
    auto rng = make_rng(derive_seed(cfg.seed, tag, global_step, slot));
    f.fwd = forward_grounding(model, f.video, f.query, rng, /*training=*/true);
    return f;
  };

  // Labeled side: supervised loss (and the source half of the transfer
  // objectives).
  std::vector<Forwarded> labeled;
  std::vector<Tensor> sup_terms;
  labeled.reserve(batch.source.size());
  for (std::size_t i = 0; i < batch.source.size(); ++i) {
    const LoadedSample& s = *batch.source[i];
    if (!s.boundary.has_value()) {
      throw AccessViolationError("train_step: labeled-side sample " +
                                 std::to_string(s.id) + " has no boundary");
    }
    labeled.push_back(run_forward(s, kRngSupSource, i));
    sup_terms.push_back(
        supervised_loss(labeled.back().fwd.map,
                        scaled_iou_targets(*s.boundary, s.visual.shape()[0])));
  }

  // Target side, forwarded once and shared by every enabled objective.
  std::vector<Forwarded> target;
  if (use_target_side) {
    target.reserve(batch.target.size());
    for (std::size_t i = 0; i < batch.target.size(); ++i) {
      target.push_back(run_forward(*batch.target[i], kRngTargetForward, i));
    }
  }
  if (cfg.regime == Regime::supervised_target) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      const LoadedSample& s = *batch.target[i];
      if (!s.boundary.has_value()) {
        throw AccessViolationError("train_step: supervised-target sample " +
                                   std::to_string(s.id) + " has no boundary");
      }
      sup_terms.push_back(
          supervised_loss(target[i].fwd.map,
                          scaled_iou_targets(*s.boundary,
                                             s.visual.shape()[0])));
    }
  }
  Tensor l_sup = mean_of(sup_terms);

  // Masked forwards for reconstruction and the masked adversarial terms.
  struct MaskedCtx {
    FeatureSequence video, query;
    MaskedForward fwd;
  };
  std::vector<MaskedCtx> masked_source, masked_target;
  if (use_masked) {
    auto run_masked = [&](const LoadedSample& s, std::uint64_t tag,
                          std::uint64_t slot) {
      MaskedCtx m{video_seq(s), query_seq(s), {}};
      auto rng = make_rng(derive_seed(cfg.seed, tag, global_step, slot));
      m.fwd = forward_masked(model, m.video, m.query, cfg.mask_ratio, rng,
                             /*training=*/true);
      return m;
    };
    masked_source.reserve(batch.source.size());
    for (std::size_t i = 0; i < batch.source.size(); ++i) {
      masked_source.push_back(
          run_masked(*batch.source[i], kRngMaskedSource, i));
    }
    masked_target.reserve(batch.target.size());
    for (std::size_t i = 0; i < batch.target.size(); ++i) {
      masked_target.push_back(
          run_masked(*batch.target[i], kRngMaskedTarget, i));
    }
  }

  Tensor l_adv = Tensor::scalar(0.0);
  if (use_adv) {
    std::vector<DomainTerm> terms;
    auto add_terms = [&](const Forwarded& f, double label) {
      if (cfg.disc_visual) {
        terms.push_back({discriminate(f.fwd.visual_encoded,
                                      FeatureKind::visual,
                                      model.discriminators, f.video.valid),
                         label});
      }
      if (cfg.disc_textual) {
        terms.push_back({discriminate(f.fwd.query_encoded,
                                      FeatureKind::textual,
                                      model.discriminators, f.query.valid),
                         label});
      }
      if (cfg.disc_fused) {
        terms.push_back({discriminate(f.fwd.fused, FeatureKind::fused,
                                      model.discriminators, f.video.valid),
                         label});
      }
    };
    auto add_masked_terms = [&](const MaskedCtx& m, double label) {
      if (cfg.disc_visual) {
        terms.push_back({discriminate(m.fwd.visual_encoded,
                                      FeatureKind::visual,
                                      model.discriminators, m.video.valid),
                         label});
      }
      if (cfg.disc_fused) {
        terms.push_back({discriminate(m.fwd.fused, FeatureKind::fused,
                                      model.discriminators, m.video.valid),
                         label});
      }
    };
    for (const Forwarded& f : labeled) add_terms(f, 0.0);
    for (const Forwarded& f : target) add_terms(f, 1.0);
    for (const MaskedCtx& m : masked_source) add_masked_terms(m, 0.0);
    for (const MaskedCtx& m : masked_target) add_masked_terms(m, 1.0);
    l_adv = adversarial_loss(terms);
  } else if (use_stat) {
    // Distribution-statistic baselines ride in the adversarial slot with
    // weight lambda_adv, averaged over the three feature kinds.
    auto pooled_rows = [&](const std::vector<Forwarded>& fwds) {
      std::vector<Tensor> visual, query, fused;
      for (const Forwarded& f : fwds) {
        visual.push_back(masked_mean(f.fwd.visual_encoded, f.video.valid));
        query.push_back(masked_mean(f.fwd.query_encoded, f.query.valid));
        fused.push_back(masked_mean(f.fwd.fused, f.video.valid));
      }
      return std::array<Tensor, 3>{stack_rows(visual), stack_rows(query),
                                   stack_rows(fused)};
    };
    auto src = pooled_rows(labeled);
    auto tgt = pooled_rows(target);
    std::vector<Tensor> stats;
    for (int kind = 0; kind < 3; ++kind) {
      stats.push_back(cfg.regime == Regime::mmd
                          ? mmd_loss(src[kind], tgt[kind])
                          : coral_loss(src[kind], tgt[kind]));
    }
    l_adv = mean_of(stats);
  }

  Tensor l_align = Tensor::scalar(0.0);
  if (use_align) {
    std::vector<Tensor> video_pooled, query_pooled;
    for (const Forwarded& f : target) {
      video_pooled.push_back(masked_mean(f.fwd.visual_encoded, f.video.valid));
      query_pooled.push_back(masked_mean(f.fwd.query_encoded, f.query.valid));
    }
    l_align = alignment_loss(video_pooled, query_pooled, cfg.margin);
  }

  Tensor l_recon = Tensor::scalar(0.0);
  if (use_recon) {
    std::vector<Tensor> recon_terms;
    auto add_recon = [&](const std::vector<MaskedCtx>& ms) {
      for (const MaskedCtx& m : ms) {
        recon_terms.push_back(reconstruction_loss(
            m.fwd.reconstructed, m.fwd.original, m.video.valid));
      }
    };
    add_recon(masked_source);
    add_recon(masked_target);
    l_recon = mean_of(recon_terms);
  }

  Tensor total = total_loss(l_sup, l_adv, l_align, l_recon, cfg);
  tape.backward(total);

  auto params = named_parameters(model);
  adamw_step(params, opt, lr, cfg.weight_decay);
  for (auto& [name, t] : params) t.zero_grad();

  LossBreakdown out;
  out.sup = l_sup.item();
  out.adv = l_adv.item();
  out.align = l_align.item();
  out.recon = l_recon.item();
  out.total = total.item();
  return out;
}

TrainResult train(const std::string& corpus_dir, const TrainConfig& cfg,
                  const std::string& checkpoint_path) {
  cfg.validate();

  // The labeled side is the source split except for target-only, which
  // switches the access mode instead of the trainer. Supervised-target
  // keeps the labeled source side and adds target labels on the secondary
  // side, making it the both-domains upper bound.
  Corpus primary =
      cfg.regime == Regime::target_only
          ? load_corpus(corpus_dir, Access::eval, Domain::target, Split::train)
          : load_corpus(corpus_dir, Access::labeled, Domain::source,
                        Split::train);
  Corpus secondary =
      cfg.regime == Regime::supervised_target
          ? load_corpus(corpus_dir, Access::eval, Domain::target, Split::train)
          : load_corpus(corpus_dir, Access::unlabeled_train, Domain::target,
                        Split::train);
  Corpus source_test =
      load_corpus(corpus_dir, Access::eval, Domain::source, Split::test);
  Corpus target_test =
      load_corpus(corpus_dir, Access::eval, Domain::target, Split::test);

  auto pointers = [](const Corpus& c) {
    std::vector<const LoadedSample*> out;
    out.reserve(c.samples.size());
    for (const LoadedSample& s : c.samples) out.push_back(&s);
    return out;
  };
  const auto primary_set = pointers(primary);
  const auto secondary_set = pointers(secondary);
  const auto source_test_set = pointers(source_test);
  const auto target_test_set = pointers(target_test);

  TrainResult result;
  result.config = cfg;
  result.config_echo = cfg.to_config();
  result.config_echo.set_int("model.visual_dim",
                             static_cast<long long>(primary.spec.visual_dim));
  result.config_echo.set_int("model.text_dim",
                             static_cast<long long>(primary.spec.text_dim));

  result.model = init_model(
      cfg.model_config(primary.spec.visual_dim, primary.spec.text_dim),
      cfg.seed);
  auto params = named_parameters(result.model);
  result.opt = make_optimizer(params);

  const std::size_t steps_per_epoch =
      std::min(primary_set.size(), secondary_set.size()) / cfg.batch_size;
  if (cfg.epochs > 0 && steps_per_epoch == 0) {
    throw ConfigError("train: batch size " + std::to_string(cfg.batch_size) +
                      " exceeds the training sets");
  }
  const std::uint64_t total_steps =
      static_cast<std::uint64_t>(cfg.epochs) * steps_per_epoch;

  const std::string hash = hash_hex(result.config_echo.hash());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchIterator it(primary_set, secondary_set, cfg.batch_size,
                     derive_seed(cfg.seed, kRngBatchOrder, epoch));
    DomainBatch batch;
    LossBreakdown sums;
    std::vector<double> recon_values;
    std::uint64_t step = 0;
    while (it.next(batch)) {
      const std::uint64_t global_step = epoch * steps_per_epoch + step;
      const double lr =
          cosine_lr(global_step, total_steps, cfg.learning_rate, cfg.lr_min);
      LossBreakdown b =
          train_step(batch, result.model, result.opt, cfg, lr, global_step);
      sums.sup += b.sup;
      sums.adv += b.adv;
      sums.align += b.align;
      sums.recon += b.recon;
      sums.total += b.total;
      recon_values.push_back(b.recon);
      ++step;
    }

    EpochMetrics em;
    em.epoch = epoch;
    const double n = static_cast<double>(step);
    em.mean_losses = {sums.sup / n, sums.adv / n, sums.align / n,
                      sums.recon / n, sums.total / n};
    em.median_recon = median_of(recon_values);
    em.source_test = evaluate_model(result.model, source_test_set,
                                    kEvalThresholds);
    em.target_test = evaluate_model(result.model, target_test_set,
                                    kEvalThresholds);
    for (MetricsReport* r : {&em.source_test, &em.target_test}) {
      r->regime = to_string(cfg.regime);
      r->seed = cfg.seed;
      r->config_hash = hash;
    }
    em.source_test.domain = "source";
    em.target_test.domain = "target";
    result.history.push_back(std::move(em));
  }

  if (!checkpoint_path.empty()) {
    CheckpointData data = to_checkpoint(result.model, result.opt,
                                        result.config_echo, cfg.epochs,
                                        cfg.seed);
    save_checkpoint(data, checkpoint_path);
  }
  return result;
}

CheckpointData to_checkpoint(ModelParams& model, const OptimizerState& opt,
                             const ConfigFile& config_echo,
                             std::uint64_t epoch, std::uint64_t seed) {
  CheckpointData data;
  data.config = config_echo;
  data.epoch = epoch;
  data.opt_step = opt.step;
  data.rng_seed = seed;
  auto params = named_parameters(model);
  if (opt.m.size() != params.size()) {
    throw DimensionError("to_checkpoint: optimizer state does not match the "
                         "parameter registry");
  }
  for (const auto& [name, t] : params) {
    data.blobs.emplace_back(name, t);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    data.blobs.emplace_back(
        "opt.m." + params[i].first,
        Tensor::from({opt.m[i].size()}, opt.m[i]));
    data.blobs.emplace_back(
        "opt.v." + params[i].first,
        Tensor::from({opt.v[i].size()}, opt.v[i]));
  }
  return data;
}

RestoredRun restore_run(const CheckpointData& data) {
  RestoredRun run;
  run.config = TrainConfig::from_config(data.config);
  run.config_echo = data.config;
  run.epoch = data.epoch;
  const auto vd = static_cast<std::size_t>(
      data.config.get_int("model.visual_dim"));
  const auto td = static_cast<std::size_t>(
      data.config.get_int("model.text_dim"));
  run.model = init_model(run.config.model_config(vd, td), data.rng_seed);
  auto params = named_parameters(run.model);
  run.opt = make_optimizer(params);
  run.opt.step = data.opt_step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const Tensor& blob = data.blob(name);
    if (blob.size() != t.size()) {
      throw DimensionError("checkpoint parameter '" + name + "' holds " +
                           std::to_string(blob.size()) + " values, expected " +
                           std::to_string(t.size()));
    }
    t.node()->value = blob.values();
    const Tensor& m = data.blob("opt.m." + name);
    const Tensor& v = data.blob("opt.v." + name);
    if (m.size() != t.size() || v.size() != t.size()) {
      throw DimensionError("checkpoint moments for '" + name +
                           "' have the wrong size");
    }
    run.opt.m[i] = m.values();
    run.opt.v[i] = v.values();
  }
  return run;
}

} // namespace amda
