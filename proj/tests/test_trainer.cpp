#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "amda/checkpoint.hpp"
#include "amda/corpus.hpp"
#include "amda/gradcheck.hpp"
#include "amda/metrics.hpp"
#include "amda/model.hpp"
#include "amda/rng.hpp"
#include "amda/trainer.hpp"

using namespace amda;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("amda_trainer_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

ScenarioSpec tiny_scenario() {
  ScenarioSpec spec;
  spec.n_frames = 12;
  spec.visual_dim = 8;
  spec.text_dim = 6;
  spec.num_classes = 3;
  spec.train_per_domain = 12;
  spec.test_per_domain = 8;
  spec.rotation_angle = 0.5;
  spec.style_bias = 0.5;
  spec.noise_sigma = 0.2;
  spec.seed = 7;
  return spec;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.heads = 2;
  cfg.encoder_layers = 1;
  cfg.dropout_rate = 0.25;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.learning_rate = 5e-4;
  cfg.mask_ratio = 0.25;
  cfg.seed = 11;
  return cfg;
}

/// Writes the shared tiny corpus once per process and hands back its dir.
const std::string& tiny_corpus_dir() {
  static TempDir dir;
  static std::string cached;
  if (cached.empty()) {
    cached = dir.str();
    write_corpus(generate_corpus(tiny_scenario()), cached);
  }
  return cached;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

std::vector<std::pair<std::string, Tensor>> params_of(ModelParams& model) {
  return named_parameters(model);
}

} // namespace

TEST_CASE("regime names round-trip and classify correctly") {
  for (Regime r : all_regimes()) {
    CHECK(regime_from_string(to_string(r)) == r);
  }
  CHECK_THROWS_AS(regime_from_string("sorce-only"), ConfigError);

  CHECK(regime_uses_adversarial(Regime::amda));
  CHECK(regime_uses_alignment(Regime::amda));
  CHECK(regime_uses_reconstruction(Regime::amda));
  CHECK_FALSE(regime_uses_statistic(Regime::amda));
  CHECK_FALSE(regime_uses_adversarial(Regime::source_only));
  CHECK_FALSE(regime_uses_alignment(Regime::source_only));
  CHECK_FALSE(regime_uses_reconstruction(Regime::source_only));
  CHECK(regime_uses_statistic(Regime::mmd));
  CHECK(regime_uses_statistic(Regime::coral));
  CHECK_FALSE(regime_uses_adversarial(Regime::mmd));
  CHECK(regime_uses_target_labels(Regime::supervised_target));
  CHECK(regime_uses_target_labels(Regime::target_only));
  CHECK_FALSE(regime_uses_target_labels(Regime::amda));
  CHECK(regime_uses_adversarial(Regime::adv_align));
  CHECK(regime_uses_alignment(Regime::adv_align));
  CHECK_FALSE(regime_uses_reconstruction(Regime::adv_align));
  CHECK(regime_uses_reconstruction(Regime::align_recon));
  CHECK_FALSE(regime_uses_adversarial(Regime::align_recon));
}

TEST_CASE("config validation rejects out-of-range settings") {
  TrainConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());

  TrainConfig bad = cfg;
  bad.lambda_adv = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.margin = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.margin = 2.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.mask_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.batch_size = 1; // alignment needs intruder pairs
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.regime = Regime::source_only;
  CHECK_NOTHROW(bad.validate());

  bad = cfg;
  bad.lr_min = cfg.learning_rate * 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.hidden_dim = 6; // not divisible by heads=4 default? heads=2 here
  bad.heads = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config serialization round-trips every field") {
  TrainConfig cfg = tiny_config();
  cfg.regime = Regime::adv_recon;
  cfg.lambda_align = 1.0 / 3.0;
  cfg.disc_textual = false;
  cfg.weight_decay = 3e-5;
  cfg.epochs = 9;

  TrainConfig back = TrainConfig::from_config(cfg.to_config());
  CHECK(back.lambda_adv == cfg.lambda_adv);
  CHECK(back.lambda_align == cfg.lambda_align);
  CHECK(back.lambda_recon == cfg.lambda_recon);
  CHECK(back.margin == cfg.margin);
  CHECK(back.mask_ratio == cfg.mask_ratio);
  CHECK(back.regime == cfg.regime);
  CHECK(back.disc_visual == cfg.disc_visual);
  CHECK(back.disc_textual == cfg.disc_textual);
  CHECK(back.disc_fused == cfg.disc_fused);
  CHECK(back.hidden_dim == cfg.hidden_dim);
  CHECK(back.heads == cfg.heads);
  CHECK(back.encoder_layers == cfg.encoder_layers);
  CHECK(back.dropout_rate == cfg.dropout_rate);
  CHECK(back.grl_weight == cfg.grl_weight);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.lr_min == cfg.lr_min);
  CHECK(back.weight_decay == cfg.weight_decay);
  CHECK(back.seed == cfg.seed);

  // Serializing the round-tripped config reproduces the same hash.
  CHECK(back.to_config().hash() == cfg.to_config().hash());
}

TEST_CASE("paper-scale flag raises the capacity defaults") {
  ConfigFile cfg;
  cfg.set_bool("train.paper_scale", true);
  TrainConfig t = TrainConfig::from_config(cfg);
  CHECK(t.hidden_dim == 256);
  CHECK(t.batch_size == 64);
  CHECK(t.epochs == 50);

  // Explicit keys still override the raised defaults.
  cfg.set_int("train.hidden_dim", 128);
  CHECK(TrainConfig::from_config(cfg).hidden_dim == 128);
}

TEST_CASE("total loss composes the weighted sum") {
  TrainConfig cfg;
  cfg.regime = Regime::amda;
  cfg.lambda_adv = 0.5;
  cfg.lambda_align = 0.2;
  cfg.lambda_recon = 0.5;
  Tensor one = Tensor::scalar(1.0);

  SUBCASE("unit components with the default weights") {
    CHECK(total_loss(one, one, one, one, cfg).item() ==
          doctest::Approx(2.2).epsilon(1e-12));
  }

  SUBCASE("hand-computed mixed example") {
    Tensor sup = Tensor::scalar(0.5);
    Tensor adv = Tensor::scalar(1.0);
    Tensor align = Tensor::scalar(2.0);
    Tensor recon = Tensor::scalar(0.4);
    // 0.5 + 0.5*1.0 + 0.2*2.0 + 0.5*0.4 = 1.6
    CHECK(total_loss(sup, adv, align, recon, cfg).item() ==
          doctest::Approx(1.6).epsilon(1e-12));
  }

  SUBCASE("zero weights leave exactly the supervised term") {
    cfg.lambda_adv = 0.0;
    cfg.lambda_align = 0.0;
    cfg.lambda_recon = 0.0;
    Tensor sup = Tensor::scalar(0.7312891);
    CHECK(total_loss(sup, one, one, one, cfg).item() == 0.7312891);
  }

  SUBCASE("disabled regimes force their weights to exactly zero") {
    cfg.regime = Regime::source_only;
    Tensor sup = Tensor::scalar(0.125);
    CHECK(total_loss(sup, one, one, one, cfg).item() == 0.125);

    cfg.regime = Regime::adv_only;
    CHECK(total_loss(sup, one, one, one, cfg).item() == 0.125 + 0.5);

    cfg.regime = Regime::align_recon;
    CHECK(total_loss(sup, one, one, one, cfg).item() == 0.125 + 0.2 + 0.5);
  }

  SUBCASE("statistic regimes reuse the adversarial slot") {
    cfg.regime = Regime::mmd;
    Tensor sup = Tensor::scalar(0.25);
    CHECK(total_loss(sup, one, one, one, cfg).item() == 0.25 + 0.5);
  }

  SUBCASE("non-finite components are rejected by name") {
    Tensor nan = Tensor::from({1}, {std::nan("")});
    CHECK_THROWS_WITH_AS(total_loss(one, nan, one, one, cfg),
                         "total_loss: non-finite adversarial component",
                         NumericError);
  }
}

TEST_CASE("adamw handles zero gradients as pure decay") {
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  std::vector<std::pair<std::string, Tensor>> params = {{"w", w}};
  OptimizerState opt = make_optimizer(params);
  REQUIRE(opt.m.size() == 1);
  REQUIRE(opt.m[0].size() == 3);

  SUBCASE("no decay means a fixed point") {
    adamw_step(params, opt, 0.1, 0.0);
    CHECK(w.values()[0] == 1.0);
    CHECK(w.values()[1] == -2.0);
    CHECK(w.values()[2] == 0.5);
    CHECK(opt.step == 1);
  }

  SUBCASE("decay shrinks weights by exactly lr*wd*theta") {
    const double lr = 0.1, wd = 0.01;
    adamw_step(params, opt, lr, wd);
    CHECK(w.values()[0] == 1.0 - lr * wd * 1.0);
    CHECK(w.values()[1] == -2.0 - lr * wd * (-2.0));
    CHECK(w.values()[2] == 0.5 - lr * wd * 0.5);
  }
}

TEST_CASE("adamw first step matches the hand-computed update") {
  Tensor w = Tensor::scalar(1.0, true);
  std::vector<std::pair<std::string, Tensor>> params = {{"w", w}};
  OptimizerState opt = make_optimizer(params);

  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(w); // d loss / d w = 1
    tape.backward(loss);
  }
  adamw_step(params, opt, 0.1, 0.0);
  // m=0.1, v=0.001; mhat=1, vhat=1; step = 0.1 * 1/(1+1e-8)
  const double expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
  CHECK(w.values()[0] == doctest::Approx(expected).epsilon(1e-15));

  // Second identical gradient: m=0.19, v=0.001999; bias corrections for t=2.
  w.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(w));
  }
  const double before = w.values()[0];
  adamw_step(params, opt, 0.1, 0.0);
  const double m = 0.9 * 0.1 + 0.1 * 1.0;
  const double v = 0.999 * 0.001 + 0.001 * 1.0;
  const double mhat = m / (1.0 - 0.9 * 0.9);
  const double vhat = v / (1.0 - 0.999 * 0.999);
  CHECK(w.values()[0] ==
        doctest::Approx(before - 0.1 * (mhat / (std::sqrt(vhat) + 1e-8)))
            .epsilon(1e-15));
}

TEST_CASE("adamw validates state and gradient health") {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  std::vector<std::pair<std::string, Tensor>> params = {{"w", w}};
  OptimizerState opt; // empty state: wrong size
  CHECK_THROWS_AS(adamw_step(params, opt, 0.1, 0.0), DimensionError);

  opt = make_optimizer(params);
  w.node()->grad = {1.0, std::nan("")};
  CHECK_THROWS_WITH_AS(adamw_step(params, opt, 0.1, 0.0),
                       "adamw_step: non-finite gradient for parameter 'w'",
                       NumericError);
}

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
  const double hi = 1e-3, lo = 1e-5;
  CHECK(cosine_lr(0, 100, hi, lo) == doctest::Approx(hi).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, hi, lo) == doctest::Approx(lo).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, hi, lo) ==
        doctest::Approx((hi + lo) / 2).epsilon(1e-12));
  // Monotone decreasing across the schedule.
  double prev = cosine_lr(0, 20, hi, lo);
  for (std::uint64_t s = 1; s <= 20; ++s) {
    const double cur = cosine_lr(s, 20, hi, lo);
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK_THROWS_AS(cosine_lr(0, 0, hi, lo), ConfigError);
  CHECK_THROWS_AS(cosine_lr(11, 10, hi, lo), ConfigError);
}

TEST_CASE("training produces one history entry per epoch with finite losses") {
  TrainConfig cfg = tiny_config();
  TrainResult run = train(tiny_corpus_dir(), cfg);

  REQUIRE(run.history.size() == cfg.epochs);
  for (std::size_t e = 0; e < run.history.size(); ++e) {
    const EpochMetrics& em = run.history[e];
    CHECK(em.epoch == e);
    for (double x : {em.mean_losses.sup, em.mean_losses.adv,
                     em.mean_losses.align, em.mean_losses.recon,
                     em.mean_losses.total, em.median_recon}) {
      CHECK(std::isfinite(x));
    }
    CHECK(em.mean_losses.sup > 0.0);
    CHECK(em.mean_losses.recon > 0.0);
    REQUIRE(em.target_test.thresholds.size() == 3);
    for (double r : em.target_test.recall) {
      CHECK(r >= 0.0);
      CHECK(r <= 100.0);
    }
    CHECK(em.source_test.domain == "source");
    CHECK(em.target_test.domain == "target");
    CHECK(em.target_test.regime == "amda");
    CHECK(em.target_test.sample_count == 8);
  }

  // Breakdown recombination: total equals the weighted component sum.
  for (const EpochMetrics& em : run.history) {
    const double recombined = em.mean_losses.sup +
                              cfg.lambda_adv * em.mean_losses.adv +
                              cfg.lambda_align * em.mean_losses.align +
                              cfg.lambda_recon * em.mean_losses.recon;
    CHECK(em.mean_losses.total == doctest::Approx(recombined).epsilon(1e-9));
  }
}

TEST_CASE("zero epochs is a no-op that still yields a usable model") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  TrainResult run = train(tiny_corpus_dir(), cfg);
  CHECK(run.history.empty());
  CHECK(run.opt.step == 0);

  // The untouched model must equal a fresh initialization.
  ModelParams fresh =
      init_model(cfg.model_config(8, 6), cfg.seed);
  auto got = params_of(run.model);
  auto want = params_of(fresh);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].first == want[i].first);
    CHECK(got[i].second.values() == want[i].second.values());
  }
}

TEST_CASE("source-only training reports exactly zero transfer losses") {
  TrainConfig cfg = tiny_config();
  cfg.regime = Regime::source_only;
  cfg.epochs = 1;
  TrainResult run = train(tiny_corpus_dir(), cfg);
  REQUIRE(run.history.size() == 1);
  CHECK(run.history[0].mean_losses.adv == 0.0);
  CHECK(run.history[0].mean_losses.align == 0.0);
  CHECK(run.history[0].mean_losses.recon == 0.0);
  CHECK(run.history[0].mean_losses.total == run.history[0].mean_losses.sup);
  CHECK(run.history[0].median_recon == 0.0);
}

TEST_CASE("statistic regimes carry mmd/coral in the adversarial slot") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  for (Regime r : {Regime::mmd, Regime::coral}) {
    cfg.regime = r;
    TrainResult run = train(tiny_corpus_dir(), cfg);
    REQUIRE(run.history.size() == 1);
    CHECK(run.history[0].mean_losses.adv > 0.0);
    CHECK(run.history[0].mean_losses.align == 0.0);
    CHECK(run.history[0].mean_losses.recon == 0.0);
  }
}

TEST_CASE("training twice from one seed is bit-identical") {
  TrainConfig cfg = tiny_config();
  TrainResult a = train(tiny_corpus_dir(), cfg);
  TrainResult b = train(tiny_corpus_dir(), cfg);

  auto pa = params_of(a.model);
  auto pb = params_of(b.model);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.values() == pb[i].second.values());
  }
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].mean_losses.total == b.history[e].mean_losses.total);
    CHECK(a.history[e].target_test.recall == b.history[e].target_test.recall);
  }

  // A different seed must actually change the run.
  cfg.seed = 12;
  TrainResult c = train(tiny_corpus_dir(), cfg);
  bool any_diff = false;
  auto pc = params_of(c.model);
  for (std::size_t i = 0; i < pa.size() && !any_diff; ++i) {
    any_diff = pa[i].second.values() != pc[i].second.values();
  }
  CHECK(any_diff);
}

TEST_CASE("disabling a loss equals setting its weight to zero, bit for bit") {
  // Identical RNG streams per purpose mean the supervised path consumes the
  // same draws whether or not the transfer losses run, and IEEE x + 0.0 == x
  // makes the zero-weighted contributions vanish exactly.
  TrainConfig gated = tiny_config();
  gated.regime = Regime::source_only;
  gated.epochs = 1;

  TrainConfig zeroed = tiny_config();
  zeroed.regime = Regime::amda;
  zeroed.lambda_adv = 0.0;
  zeroed.lambda_align = 0.0;
  zeroed.lambda_recon = 0.0;
  zeroed.epochs = 1;

  TrainResult a = train(tiny_corpus_dir(), gated);
  TrainResult b = train(tiny_corpus_dir(), zeroed);

  auto pa = params_of(a.model);
  auto pb = params_of(b.model);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    INFO("parameter ", pa[i].first);
    CHECK(pa[i].second.values() == pb[i].second.values());
  }
  CHECK(a.history[0].mean_losses.sup == b.history[0].mean_losses.sup);
  CHECK(a.history[0].mean_losses.total == b.history[0].mean_losses.total);
}

TEST_CASE("checkpoints round-trip byte-exactly through save/load/save") {
  TempDir dir;
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  const std::string first = (dir.path / "run.ckpt").string();
  const std::string second = (dir.path / "again.ckpt").string();

  TrainResult run = train(tiny_corpus_dir(), cfg, first);
  CheckpointData loaded = load_checkpoint(first);
  save_checkpoint(loaded, second);
  CHECK(read_bytes(first) == read_bytes(second));

  CHECK(loaded.epoch == cfg.epochs);
  CHECK(loaded.rng_seed == cfg.seed);
  CHECK(loaded.opt_step == run.opt.step);
  CHECK(loaded.config.hash() == run.config_echo.hash());
}

TEST_CASE("a restored run reproduces parameters and optimizer state") {
  TempDir dir;
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  const std::string path = (dir.path / "run.ckpt").string();
  TrainResult run = train(tiny_corpus_dir(), cfg, path);

  RestoredRun restored = restore_run(load_checkpoint(path));
  CHECK(restored.epoch == cfg.epochs);
  CHECK(restored.opt.step == run.opt.step);
  CHECK(restored.config.regime == cfg.regime);
  CHECK(restored.config.hidden_dim == cfg.hidden_dim);
  CHECK(restored.config.seed == cfg.seed);

  auto got = params_of(restored.model);
  auto want = params_of(run.model);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    INFO("parameter ", want[i].first);
    CHECK(got[i].first == want[i].first);
    // Values pass through f32 storage, so compare after the same quantization.
    std::vector<double> expect = want[i].second.values();
    for (double& x : expect) x = static_cast<double>(static_cast<float>(x));
    CHECK(got[i].second.values() == expect);
  }
  REQUIRE(restored.opt.m.size() == run.opt.m.size());
  for (std::size_t i = 0; i < run.opt.m.size(); ++i) {
    std::vector<double> em = run.opt.m[i], ev = run.opt.v[i];
    for (double& x : em) x = static_cast<double>(static_cast<float>(x));
    for (double& x : ev) x = static_cast<double>(static_cast<float>(x));
    CHECK(restored.opt.m[i] == em);
    CHECK(restored.opt.v[i] == ev);
  }
}

TEST_CASE("target-label regimes read boundaries from the target split") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.regime = Regime::supervised_target;
  TrainResult sup = train(tiny_corpus_dir(), cfg);
  CHECK(sup.history[0].mean_losses.sup > 0.0);
  CHECK(sup.history[0].mean_losses.adv == 0.0);

  cfg.regime = Regime::target_only;
  TrainResult tgt = train(tiny_corpus_dir(), cfg);
  CHECK(tgt.history[0].mean_losses.sup > 0.0);
  CHECK(tgt.history[0].mean_losses.total == tgt.history[0].mean_losses.sup);

  // Supervised-target trains on both domains' labels, so it must diverge
  // from both single-domain baselines.
  cfg.regime = Regime::source_only;
  TrainResult src = train(tiny_corpus_dir(), cfg);
  const auto sup_params = named_parameters(sup.model);
  const auto tgt_params = named_parameters(tgt.model);
  const auto src_params = named_parameters(src.model);
  bool differs_from_target_only = false, differs_from_source_only = false;
  for (std::size_t i = 0; i < sup_params.size(); ++i) {
    differs_from_target_only = differs_from_target_only ||
        sup_params[i].second.values() != tgt_params[i].second.values();
    differs_from_source_only = differs_from_source_only ||
        sup_params[i].second.values() != src_params[i].second.values();
  }
  CHECK(differs_from_target_only);
  CHECK(differs_from_source_only);
}

TEST_CASE("the full training objective passes finite-difference checks") {
  // A miniature end-to-end loss: supervised + alignment + reconstruction
  // (no gradient reversal, whose backward deliberately disagrees with the
  // true derivative of its identity forward).
  ModelConfig mc;
  mc.visual_dim = 5;
  mc.text_dim = 4;
  mc.hidden_dim = 8;
  mc.heads = 2;
  mc.encoder_layers = 1;
  mc.dropout_rate = 0.2;
  ModelParams model = init_model(mc, 3);

  auto rng = make_rng(derive_seed(99, 0xFD));
  auto random_sample = [&](std::size_t frames, std::size_t words) {
    LoadedSample s;
    std::vector<double> vis(frames * mc.visual_dim), txt(words * mc.text_dim);
    for (double& x : vis) x = gaussian(rng) * 0.5;
    for (double& x : txt) x = gaussian(rng) * 0.5;
    s.visual = Tensor::from({frames, mc.visual_dim}, vis);
    s.query = Tensor::from({words, mc.text_dim}, txt);
    return s;
  };
  LoadedSample src = random_sample(8, 4);
  src.boundary = TemporalBoundary{2, 5};
  LoadedSample tgt_a = random_sample(8, 5);
  LoadedSample tgt_b = random_sample(8, 4);

  TrainConfig cfg = tiny_config();
  cfg.regime = Regime::align_recon;
  cfg.margin = 0.5;
  cfg.mask_ratio = 0.25;

  auto loss_fn = [&](const std::vector<Tensor>&) {
    FeatureSequence sv = FeatureSequence::make(
        src.visual, BoolMask(8, 1), Modality::visual);
    FeatureSequence sq = FeatureSequence::make(
        src.query, BoolMask(4, 1), Modality::textual);
    auto r1 = make_rng(derive_seed(5, 1));
    SampleForward f = forward_grounding(model, sv, sq, r1, true);
    Tensor sup = supervised_loss(f.map, scaled_iou_targets(*src.boundary, 8));

    std::vector<Tensor> vid_pool, qry_pool;
    std::vector<Tensor> recon_terms;
    std::size_t slot = 0;
    for (const LoadedSample* t : {&tgt_a, &tgt_b}) {
      FeatureSequence tv = FeatureSequence::make(
          t->visual, BoolMask(t->visual.shape()[0], 1), Modality::visual);
      FeatureSequence tq = FeatureSequence::make(
          t->query, BoolMask(t->query.shape()[0], 1), Modality::textual);
      auto r2 = make_rng(derive_seed(5, 2, slot));
      SampleForward g = forward_grounding(model, tv, tq, r2, true);
      vid_pool.push_back(masked_mean(g.visual_encoded, tv.valid));
      qry_pool.push_back(masked_mean(g.query_encoded, tq.valid));
      auto r3 = make_rng(derive_seed(5, 3, slot));
      MaskedForward m =
          forward_masked(model, tv, tq, cfg.mask_ratio, r3, true);
      recon_terms.push_back(
          reconstruction_loss(m.reconstructed, m.original, tv.valid));
      ++slot;
    }
    Tensor align = alignment_loss(vid_pool, qry_pool, cfg.margin);
    Tensor recon = add(recon_terms[0], recon_terms[1]);
    return add(add(sup, mul(align, 0.7)), mul(recon, 0.45));
  };

  // Spot-check a representative parameter from every stage of the model.
  std::vector<Tensor> spots = {
      model.visual_encoder.proj_w,
      model.visual_encoder.layers[0].wq,
      model.query_encoder.proj_b,
      model.mask_token,
      model.fusion.w_f,
      model.predictor.u,
      model.predictor.start_w1,
      model.decoder.k1,
  };
  GradCheckReport report = finite_difference_check(loss_fn, spots, 1e-5, 1e-3);
  INFO(report.describe());
  CHECK(report.passed);
}

TEST_CASE("adversarial gradients below the reversal layer are exact") {
  // Discriminator parameters sit downstream of the reversal, so their
  // analytic gradients must match finite differences tightly.
  ModelConfig mc;
  mc.visual_dim = 5;
  mc.text_dim = 4;
  mc.hidden_dim = 8;
  mc.heads = 2;
  mc.encoder_layers = 1;
  mc.dropout_rate = 0.0;
  ModelParams model = init_model(mc, 4);

  auto rng = make_rng(derive_seed(100, 0xFD));
  auto random_rows = [&](std::size_t n, std::size_t d) {
    std::vector<double> v(n * d);
    for (double& x : v) x = gaussian(rng) * 0.5;
    return Tensor::from({n, d}, v);
  };
  Tensor src_v = random_rows(6, mc.visual_dim);
  Tensor src_q = random_rows(4, mc.text_dim);
  Tensor tgt_v = random_rows(6, mc.visual_dim);
  Tensor tgt_q = random_rows(5, mc.text_dim);

  auto loss_fn = [&](const std::vector<Tensor>&) {
    auto forward = [&](const Tensor& v, const Tensor& q, std::uint64_t slot) {
      FeatureSequence fv = FeatureSequence::make(
          v, BoolMask(v.shape()[0], 1), Modality::visual);
      FeatureSequence fq = FeatureSequence::make(
          q, BoolMask(q.shape()[0], 1), Modality::textual);
      auto r = make_rng(derive_seed(6, slot));
      return std::make_pair(forward_grounding(model, fv, fq, r, true), fv);
    };
    auto [sf, sv] = forward(src_v, src_q, 0);
    auto [tf, tv] = forward(tgt_v, tgt_q, 1);
    std::vector<DomainTerm> terms;
    terms.push_back({discriminate(sf.fused, FeatureKind::fused,
                                  model.discriminators, sv.valid),
                     0.0});
    terms.push_back({discriminate(tf.fused, FeatureKind::fused,
                                  model.discriminators, tv.valid),
                     1.0});
    return adversarial_loss(terms);
  };

  std::vector<Tensor> disc_params = {
      model.discriminators.fused.w1, model.discriminators.fused.b1,
      model.discriminators.fused.w2, model.discriminators.fused.b2};
  GradCheckReport report =
      finite_difference_check(loss_fn, disc_params, 1e-5, 1e-4);
  INFO(report.describe());
  CHECK(report.passed);

  // Above the reversal the analytic gradient of the adversarial loss is the
  // exact negation of the true (finite-difference) derivative.
  Tensor probe = model.fusion.w_f;
  probe.zero_grad(); // the earlier check's backward pass left gradients here
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn({});
    tape.backward(loss);
    analytic = probe.grad();
    probe.node()->grad.clear();
  }
  const std::size_t idx = 3;
  const double h = 1e-5;
  std::vector<double>& vals = probe.node()->value;
  const double saved = vals[idx];
  vals[idx] = saved + h;
  const double up = loss_fn({}).item();
  vals[idx] = saved - h;
  const double down = loss_fn({}).item();
  vals[idx] = saved;
  const double numeric = (up - down) / (2 * h);
  CHECK(analytic[idx] == doctest::Approx(-numeric).epsilon(1e-3));
}
