#include "amda/experiments.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "amda/gradcheck.hpp"
#include "amda/model.hpp"
#include "amda/rng.hpp"

namespace amda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string metric_name(double threshold) {
  std::ostringstream os;
  os << "recall_iou_" << threshold;
  return os.str();
}

/// Every hash line ever written to the event log.
bool log_contains_hash(const std::string& path, const std::string& hash) {
  std::ifstream in(path);
  if (!in.good()) return false;
  std::string line;
  const std::string needle = "\"experiment_hash\":\"" + hash + "\"";
  while (std::getline(in, line)) {
    if (line.find(needle) != std::string::npos) return true;
  }
  return false;
}

std::string experiment_hash(const std::string& kind,
                            const std::vector<LabeledConfig>& grid,
                            const std::vector<std::uint64_t>& seeds) {
  std::string material = kind;
  for (const LabeledConfig& lc : grid) {
    material += '\n' + lc.label + '\n' + lc.config.to_config().serialize();
  }
  for (std::uint64_t s : seeds) material += ',' + std::to_string(s);
  return hash_hex(fnv1a64(material));
}

json report_to_json(const MetricsReport& r) {
  json j;
  j["domain"] = r.domain;
  j["sample_count"] = r.sample_count;
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    j[metric_name(r.thresholds[i])] = r.recall[i];
  }
  return j;
}

} // namespace

std::vector<LabeledConfig> regime_grid(const TrainConfig& base) {
  const Regime rows[] = {Regime::source_only, Regime::recon_only,
                         Regime::align_only,  Regime::adv_only,
                         Regime::align_recon, Regime::adv_recon,
                         Regime::adv_align,   Regime::amda};
  std::vector<LabeledConfig> grid;
  for (Regime r : rows) {
    TrainConfig cfg = base;
    cfg.regime = r;
    grid.push_back({to_string(r), cfg});
  }
  return grid;
}

std::vector<LabeledConfig> discriminator_grid(const TrainConfig& base) {
  struct Row {
    const char* label;
    bool visual, textual, fused;
  };
  const Row rows[] = {
      {"disc-none", false, false, false},
      {"disc-textual", false, true, false},
      {"disc-visual", true, false, false},
      {"disc-visual+textual", true, true, false},
      {"disc-fused", false, false, true},
      {"disc-all", true, true, true},
  };
  std::vector<LabeledConfig> grid;
  for (const Row& row : rows) {
    TrainConfig cfg = base;
    cfg.regime = Regime::amda;
    cfg.disc_visual = row.visual;
    cfg.disc_textual = row.textual;
    cfg.disc_fused = row.fused;
    grid.push_back({row.label, cfg});
  }
  return grid;
}

std::vector<double> default_sweep_values() {
  return {0.1, 0.2, 0.3, 0.4, 0.5};
}

std::vector<LabeledConfig> sweep_grid(const TrainConfig& base,
                                      const std::string& param,
                                      const std::vector<double>& values) {
  if (values.empty()) {
    throw ConfigError("sweep: no values given for parameter '" + param + "'");
  }
  std::vector<LabeledConfig> grid;
  for (double v : values) {
    TrainConfig cfg = base;
    if (param == "margin") {
      cfg.margin = v;
    } else if (param == "mask-ratio") {
      cfg.mask_ratio = v;
    } else {
      throw ConfigError("sweep: unknown parameter '" + param +
                        "' (expected margin or mask-ratio)");
    }
    cfg.validate();
    std::ostringstream label;
    label << param << "=" << v;
    grid.push_back({label.str(), cfg});
  }
  return grid;
}

double median_value(std::vector<double> values) {
  if (values.empty()) {
    throw DegenerateInputError("median of an empty sample");
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return (values[(n - 1) / 2] + values[n / 2]) / 2.0;
}

std::vector<AggregateRow> aggregate_runs(const std::vector<RunOutcome>& runs) {
  std::vector<AggregateRow> rows;
  std::vector<std::string> labels;
  for (const RunOutcome& r : runs) {
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) {
      labels.push_back(r.label);
    }
  }
  for (const std::string& label : labels) {
    for (const char* domain : {"source", "target"}) {
      const MetricsReport* first = nullptr;
      for (const RunOutcome& r : runs) {
        if (r.label == label) {
          first = std::string(domain) == "source" ? &r.source_test
                                                  : &r.target_test;
          break;
        }
      }
      for (double threshold : first->thresholds) {
        std::vector<double> values;
        for (const RunOutcome& r : runs) {
          if (r.label != label) continue;
          const MetricsReport& rep =
              std::string(domain) == "source" ? r.source_test : r.target_test;
          values.push_back(rep.recall_at(threshold));
        }
        AggregateRow row;
        row.label = label;
        row.domain = domain;
        row.threshold = threshold;
        row.median = median_value(values);
        row.min = *std::min_element(values.begin(), values.end());
        row.max = *std::max_element(values.begin(), values.end());
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

ExperimentResult run_experiment(const std::string& kind,
                                const std::vector<LabeledConfig>& grid,
                                const std::string& corpus_dir,
                                const std::string& out_dir,
                                const std::vector<std::uint64_t>& seeds,
                                bool force, bool save_checkpoints) {
  if (grid.empty()) {
    throw ConfigError("experiment '" + kind + "' has an empty grid");
  }
  if (seeds.empty()) {
    throw ConfigError("experiment '" + kind + "' has no seeds");
  }
  fs::create_directories(out_dir);
  const std::string events_path = (fs::path(out_dir) / "events.jsonl").string();
  const std::string csv_path = (fs::path(out_dir) / "results.csv").string();

  const std::string exp_hash = experiment_hash(kind, grid, seeds);
  if (!force && log_contains_hash(events_path, exp_hash)) {
    throw ConfigError("results for experiment hash " + exp_hash + " already "
                      "exist in " + events_path + "; pass --force to re-run");
  }

  std::ofstream events(events_path, std::ios::app);
  if (!events.good()) {
    throw IoError("cannot open event log " + events_path);
  }
  auto emit = [&](const json& j) { events << j.dump() << "\n"; };

  {
    json j;
    j["event"] = "experiment";
    j["kind"] = kind;
    j["experiment_hash"] = exp_hash;
    j["rows"] = grid.size();
    j["seeds"] = seeds;
    emit(j);
  }

  ExperimentResult result;
  for (const LabeledConfig& lc : grid) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = lc.config;
      cfg.seed = seed;
      const std::string run_hash = hash_hex(cfg.to_config().hash());
      {
        json j;
        j["event"] = "run_start";
        j["experiment_hash"] = exp_hash;
        j["label"] = lc.label;
        j["regime"] = to_string(cfg.regime);
        j["seed"] = seed;
        j["config_hash"] = run_hash;
        emit(j);
      }

      std::string ckpt_path;
      if (save_checkpoints) {
        ckpt_path = (fs::path(out_dir) / (lc.label + "-seed" +
                                          std::to_string(seed) + ".ckpt"))
                        .string();
      }
      TrainResult run = train(corpus_dir, cfg, ckpt_path);
      for (const EpochMetrics& em : run.history) {
        json j;
        j["event"] = "epoch";
        j["label"] = lc.label;
        j["seed"] = seed;
        j["epoch"] = em.epoch;
        j["loss_sup"] = em.mean_losses.sup;
        j["loss_adv"] = em.mean_losses.adv;
        j["loss_align"] = em.mean_losses.align;
        j["loss_recon"] = em.mean_losses.recon;
        j["loss_total"] = em.mean_losses.total;
        j["target"] = report_to_json(em.target_test);
        emit(j);
      }
      if (run.history.empty()) {
        throw ConfigError("experiment '" + kind +
                          "' ran zero epochs; nothing to report");
      }

      RunOutcome outcome;
      outcome.label = lc.label;
      outcome.regime = to_string(cfg.regime);
      outcome.seed = seed;
      outcome.config_hash = run_hash;
      outcome.source_test = run.history.back().source_test;
      outcome.target_test = run.history.back().target_test;
      {
        json j;
        j["event"] = "run_end";
        j["label"] = lc.label;
        j["seed"] = seed;
        j["config_hash"] = run_hash;
        j["source"] = report_to_json(outcome.source_test);
        j["target"] = report_to_json(outcome.target_test);
        if (!ckpt_path.empty()) {
          j["checkpoint"] = fs::path(ckpt_path).filename().string();
        }
        emit(j);
      }
      result.runs.push_back(std::move(outcome));
    }
  }
  result.aggregates = aggregate_runs(result.runs);

  const bool fresh = !fs::exists(csv_path);
  std::ofstream csv(csv_path, std::ios::app);
  if (!csv.good()) {
    throw IoError("cannot open results table " + csv_path);
  }
  if (fresh) csv << "label,regime,seed,domain,metric,value\n";
  csv.precision(17);
  for (const RunOutcome& r : result.runs) {
    for (const auto* rep : {&r.source_test, &r.target_test}) {
      for (std::size_t i = 0; i < rep->thresholds.size(); ++i) {
        csv << r.label << ',' << r.regime << ',' << r.seed << ','
            << rep->domain << ',' << metric_name(rep->thresholds[i]) << ','
            << rep->recall[i] << "\n";
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

namespace {

/// Random tensor with entries pushed away from relu/hinge kinks.
Tensor rand_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0,
                   bool grad = true) {
  std::size_t total = 1;
  for (std::size_t s : shape) total *= s;
  std::vector<double> v(total);
  for (double& x : v) {
    x = gaussian(rng) * scale;
    if (std::abs(x) < 1e-3) x += (x < 0 ? -1e-2 : 1e-2);
  }
  return Tensor::from(std::move(shape), std::move(v), grad);
}

BoolMask rand_mask(std::mt19937_64& rng, std::size_t n) {
  BoolMask m(n, 0);
  for (auto& b : m) b = bounded_uint(rng, 4) > 0 ? 1 : 0;
  m[0] = 1; // at least one valid entry
  return m;
}

using Builder = std::function<GradCheckReport(std::mt19937_64&)>;

GradCheckReport check(const std::function<Tensor(void)>& fn,
                      std::vector<Tensor> inputs, double tol) {
  return finite_difference_check(
      [&](const std::vector<Tensor>&) { return fn(); }, inputs, 1e-5, tol);
}

} // namespace

std::vector<OpCheck> gradcheck_suite(std::size_t instances, double tol) {
  struct Entry {
    std::string op;
    double tol;
    Builder build;
  };
  std::vector<Entry> entries;
  auto op = [&](const std::string& name, Builder b) {
    entries.push_back({name, tol, std::move(b)});
  };

  op("matmul", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    Tensor b = rand_tensor(rng, {4, 2});
    return check([&] { return sum(matmul(a, b)); }, {a, b}, tol);
  });
  op("add", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    Tensor b = rand_tensor(rng, {3, 4});
    return check([&] { return sum(add(a, b)); }, {a, b}, tol);
  });
  op("add_rowvec", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    Tensor b = rand_tensor(rng, {1, 4});
    return check([&] { return sum(mul(add(a, b), add(a, b))); }, {a, b}, tol);
  });
  op("sub", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {2, 5});
    Tensor b = rand_tensor(rng, {2, 5});
    return check([&] { return sum(mul(sub(a, b), sub(a, b))); }, {a, b}, tol);
  });
  op("mul", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {2, 5});
    Tensor b = rand_tensor(rng, {2, 5});
    return check([&] { return sum(mul(a, b)); }, {a, b}, tol);
  });
  op("mul_scalar", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {2, 5});
    return check([&] { return sum(mul(mul(a, 1.7), a)); }, {a}, tol);
  });
  op("relu", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    return check([&] { return sum(mul(relu(a), a)); }, {a}, tol);
  });
  op("sigmoid", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    return check([&] { return sum(mul(sigmoid(a), a)); }, {a}, tol);
  });
  op("softmax", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 5});
    Tensor w = rand_tensor(rng, {3, 5}, 1.0, false);
    const std::size_t axis = bounded_uint(rng, 2);
    return check([&] { return sum(mul(softmax(a, axis), w)); }, {a}, tol);
  });
  op("transpose", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    return check([&] { return sum(mul(transpose(a), transpose(a))); }, {a},
                 tol);
  });
  op("reshape", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    return check([&] { return sum(mul(reshape(a, {2, 6}), 2.0)); }, {a}, tol);
  });
  op("slice_cols", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 6});
    return check(
        [&] {
          Tensor s = slice_cols(a, 1, 4);
          return sum(mul(s, s));
        },
        {a}, tol);
  });
  op("concat_cols", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 2});
    Tensor b = rand_tensor(rng, {3, 3});
    return check(
        [&] {
          Tensor c = concat_cols({a, b});
          return sum(mul(c, c));
        },
        {a, b}, tol);
  });
  op("sum", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {4, 3});
    return check([&] { return sum(a); }, {a}, tol);
  });
  op("masked_mean", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {5, 4});
    BoolMask m = rand_mask(rng, 5);
    Tensor w = rand_tensor(rng, {1, 4}, 1.0, false);
    return check(
        [&] { return sum(mul(reshape(masked_mean(a, m), {1, 4}), w)); }, {a},
        tol);
  });
  op("cosine_similarity", [tol](std::mt19937_64& rng) {
    Tensor u = rand_tensor(rng, {6});
    Tensor v = rand_tensor(rng, {6});
    return check([&] { return cosine_similarity(u, v); }, {u, v}, tol);
  });
  op("row_cosine_matrix", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    Tensor b = rand_tensor(rng, {2, 4});
    Tensor w = rand_tensor(rng, {3, 2}, 1.0, false);
    return check([&] { return sum(mul(row_cosine_matrix(a, b), w)); }, {a, b},
                 tol);
  });
  op("conv1d", [tol](std::mt19937_64& rng) {
    Tensor x = rand_tensor(rng, {6, 3});
    Tensor k = rand_tensor(rng, {3, 3, 2});
    Tensor b = rand_tensor(rng, {2});
    return check(
        [&] {
          Tensor y = conv1d(x, k, b);
          return sum(mul(y, y));
        },
        {x, k, b}, tol);
  });
  op("bce_loss", [tol](std::mt19937_64& rng) {
    Tensor logits = rand_tensor(rng, {4, 3});
    std::vector<double> lbl(12);
    for (double& x : lbl) x = static_cast<double>(bounded_uint(rng, 2));
    Tensor labels = Tensor::from({4, 3}, lbl);
    return check([&] { return bce_loss(sigmoid(logits), labels); }, {logits},
                 tol);
  });
  op("mse_loss", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {4, 3});
    Tensor b = rand_tensor(rng, {4, 3});
    return check([&] { return mse_loss(a, b); }, {a, b}, tol);
  });
  op("mse_loss_rows", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {5, 3});
    Tensor b = rand_tensor(rng, {5, 3});
    BoolMask m = rand_mask(rng, 5);
    return check([&] { return mse_loss_rows(a, b, m); }, {a, b}, tol);
  });
  op("dropout", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {4, 6});
    const std::uint64_t seed = rng();
    return check(
        [&] {
          auto drop_rng = make_rng(seed);
          return sum(mul(dropout(a, 0.4, drop_rng, true), a));
        },
        {a}, tol);
  });
  op("gradient_reversal", [tol](std::mt19937_64& rng) {
    // The reversal lies to the tape on purpose, so instead of finite
    // differences we verify the contract: its gradient is exactly the
    // negated identity gradient scaled by the weight.
    Tensor a = rand_tensor(rng, {3, 4});
    Tensor w = rand_tensor(rng, {3, 4}, 1.0, false);
    const double weight = 0.5 + uniform_double(rng);
    std::vector<double> reversed, plain;
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(mul(gradient_reversal(a, weight), w)));
      reversed = a.grad();
      a.zero_grad();
    }
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(mul(a, w)));
      plain = a.grad();
      a.zero_grad();
    }
    GradCheckReport r;
    for (std::size_t i = 0; i < reversed.size(); ++i) {
      const double want = -weight * plain[i];
      r.max_rel_err = std::max(
          r.max_rel_err, std::abs(reversed[i] - want) /
                             std::max({std::abs(reversed[i]),
                                       std::abs(want), 1.0}));
    }
    r.passed = r.max_rel_err <= tol;
    return r;
  });
  op("encoder", [tol](std::mt19937_64& rng) {
    EncoderParams enc;
    ModelConfig mc;
    mc.visual_dim = 4;
    mc.text_dim = 4;
    mc.hidden_dim = 6;
    mc.heads = 2;
    mc.encoder_layers = 1;
    mc.dropout_rate = 0.0;
    ModelParams model = init_model(mc, rng());
    Tensor x = rand_tensor(rng, {5, 4}, 1.0, false);
    BoolMask m(5, 1);
    m[4] = 0;
    FeatureSequence seq =
        FeatureSequence::make(x, m, Modality::visual);
    auto fwd = [&] {
      auto r = make_rng(0);
      Tensor h = encode(seq, model.visual_encoder, r, false);
      return sum(mul(h, h));
    };
    return check(fwd,
                 {model.visual_encoder.proj_w, model.visual_encoder.proj_b,
                  model.visual_encoder.layers[0].wq,
                  model.visual_encoder.layers[0].wo,
                  model.visual_encoder.layers[0].bv},
                 tol);
  });
  op("context_query_attention", [tol](std::mt19937_64& rng) {
    Tensor v = rand_tensor(rng, {4, 5});
    Tensor q = rand_tensor(rng, {3, 5});
    BoolMask vm(4, 1), qm(3, 1);
    return check(
        [&] {
          SimilarityMatrices s = similarity(v, q, vm, qm);
          CrossAttention a = context_query_attention(v, q, s);
          return sum(mul(a.a_v, a.a_v));
        },
        {v, q}, tol);
  });
  op("fuse", [tol](std::mt19937_64& rng) {
    Tensor v = rand_tensor(rng, {4, 3});
    Tensor q = rand_tensor(rng, {3, 3});
    FusionParams fp;
    fp.w_f = rand_tensor(rng, {12, 3});
    fp.b_f = rand_tensor(rng, {3});
    BoolMask vm(4, 1), qm(3, 1);
    return check(
        [&] {
          SimilarityMatrices s = similarity(v, q, vm, qm);
          CrossAttention a = context_query_attention(v, q, s);
          Tensor f = fuse(v, a, fp, vm);
          return sum(mul(f, f));
        },
        {v, q, fp.w_f, fp.b_f}, tol);
  });
  op("supervised_loss", [tol](std::mt19937_64& rng) {
    ModelConfig mc;
    mc.visual_dim = 4;
    mc.text_dim = 4;
    mc.hidden_dim = 6;
    mc.heads = 2;
    mc.encoder_layers = 1;
    ModelParams model = init_model(mc, rng());
    Tensor h = rand_tensor(rng, {5, 6});
    const TemporalBoundary gt{1, 3};
    return check(
        [&] {
          return supervised_loss(score_map(h, model.predictor),
                                 scaled_iou_targets(gt, 5));
        },
        {h, model.predictor.start_w1, model.predictor.end_w2,
         model.predictor.u, model.predictor.w, model.predictor.bias},
        tol);
  });
  op("adversarial_loss", [tol](std::mt19937_64& rng) {
    ModelConfig mc;
    mc.visual_dim = 4;
    mc.text_dim = 4;
    mc.hidden_dim = 6;
    mc.heads = 2;
    mc.encoder_layers = 1;
    ModelParams model = init_model(mc, rng());
    Tensor hs = rand_tensor(rng, {4, 6}, 1.0, false);
    Tensor ht = rand_tensor(rng, {5, 6}, 1.0, false);
    BoolMask ms(4, 1), mt(5, 1);
    return check(
        [&] {
          std::vector<DomainTerm> terms;
          terms.push_back({discriminate(hs, FeatureKind::fused,
                                        model.discriminators, ms),
                           0.0});
          terms.push_back({discriminate(ht, FeatureKind::fused,
                                        model.discriminators, mt),
                           1.0});
          return adversarial_loss(terms);
        },
        {model.discriminators.fused.w1, model.discriminators.fused.b1,
         model.discriminators.fused.w2, model.discriminators.fused.b2},
        tol);
  });
  op("alignment_loss", [tol](std::mt19937_64& rng) {
    Tensor v0 = rand_tensor(rng, {5});
    Tensor v1 = rand_tensor(rng, {5});
    Tensor q0 = rand_tensor(rng, {5});
    Tensor q1 = rand_tensor(rng, {5});
    return check(
        [&] { return alignment_loss({v0, v1}, {q0, q1}, 0.5); },
        {v0, v1, q0, q1}, tol);
  });
  op("reconstruction_loss", [tol](std::mt19937_64& rng) {
    ModelConfig mc;
    mc.visual_dim = 4;
    mc.text_dim = 4;
    mc.hidden_dim = 6;
    mc.heads = 2;
    mc.encoder_layers = 1;
    ModelParams model = init_model(mc, rng());
    Tensor enc = rand_tensor(rng, {5, 6});
    Tensor fus = rand_tensor(rng, {5, 6});
    Tensor orig = rand_tensor(rng, {5, 4}, 1.0, false);
    BoolMask m(5, 1);
    m[4] = 0;
    return check(
        [&] {
          Tensor rec = reconstruct(enc, fus, model.decoder);
          return reconstruction_loss(rec, orig, m);
        },
        {enc, fus, model.decoder.k1, model.decoder.b1, model.decoder.k2,
         model.decoder.b2},
        tol);
  });
  op("mmd_loss", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {4, 5});
    Tensor b = rand_tensor(rng, {3, 5});
    return check([&] { return mmd_loss(a, b); }, {a, b}, tol);
  });
  op("coral_loss", [tol](std::mt19937_64& rng) {
    Tensor a = rand_tensor(rng, {4, 5});
    Tensor b = rand_tensor(rng, {5, 5});
    return check([&] { return coral_loss(a, b); }, {a, b}, tol);
  });
  op("total_loss", [tol](std::mt19937_64& rng) {
    Tensor sup = rand_tensor(rng, {1}, 0.5);
    Tensor adv = rand_tensor(rng, {1}, 0.5);
    Tensor align = rand_tensor(rng, {1}, 0.5);
    Tensor recon = rand_tensor(rng, {1}, 0.5);
    TrainConfig cfg;
    cfg.regime = Regime::amda;
    return check(
        [&] {
          return total_loss(relu(sup), relu(adv), relu(align), relu(recon),
                            cfg);
        },
        {sup, adv, align, recon}, tol);
  });
  // Full-model composite: one supervised + alignment + reconstruction pass
  // through every stage (no reversal layer, whose backward intentionally
  // differs from the forward's true derivative). Spot check at 10x tol.
  entries.push_back(
      {"full_model", 10 * tol, [tol](std::mt19937_64& rng) {
         ModelConfig mc;
         mc.visual_dim = 5;
         mc.text_dim = 4;
         mc.hidden_dim = 8;
         mc.heads = 2;
         mc.encoder_layers = 1;
         mc.dropout_rate = 0.2;
         ModelParams model = init_model(mc, rng());
         Tensor sv = rand_tensor(rng, {6, 5}, 0.8, false);
         Tensor sq = rand_tensor(rng, {3, 4}, 0.8, false);
         Tensor tv = rand_tensor(rng, {6, 5}, 0.8, false);
         Tensor tv2 = rand_tensor(rng, {6, 5}, 0.8, false);
         Tensor tq = rand_tensor(rng, {3, 4}, 0.8, false);
         Tensor tq2 = rand_tensor(rng, {4, 4}, 0.8, false);
         const std::uint64_t fwd_seed = rng();
         auto fwd = [&] {
           FeatureSequence v = FeatureSequence::make(sv, BoolMask(6, 1),
                                                     Modality::visual);
           FeatureSequence q = FeatureSequence::make(sq, BoolMask(3, 1),
                                                     Modality::textual);
           auto r = make_rng(fwd_seed);
           SampleForward f = forward_grounding(model, v, q, r, true);
           Tensor sup = supervised_loss(
               f.map, scaled_iou_targets(TemporalBoundary{1, 4}, 6));

           std::vector<Tensor> vp, qp, recs;
           std::size_t slot = 1;
           const std::pair<Tensor, Tensor> pairs[2] = {{tv, tq}, {tv2, tq2}};
           for (const auto& pair : pairs) {
             FeatureSequence fv = FeatureSequence::make(
                 pair.first, BoolMask(pair.first.shape()[0], 1),
                 Modality::visual);
             FeatureSequence fq = FeatureSequence::make(
                 pair.second, BoolMask(pair.second.shape()[0], 1),
                 Modality::textual);
             auto r2 = make_rng(fwd_seed + slot);
             SampleForward g = forward_grounding(model, fv, fq, r2, true);
             vp.push_back(masked_mean(g.visual_encoded, fv.valid));
             qp.push_back(masked_mean(g.query_encoded, fq.valid));
             auto r3 = make_rng(fwd_seed + 16 + slot);
             MaskedForward mk =
                 forward_masked(model, fv, fq, 0.25, r3, true);
             recs.push_back(reconstruction_loss(mk.reconstructed, mk.original,
                                                fv.valid));
             ++slot;
           }
           Tensor align = alignment_loss(vp, qp, 0.5);
           Tensor recon = add(recs[0], recs[1]);
           return add(add(sup, mul(align, 0.2)), mul(recon, 0.5));
         };
         return check(fwd,
                      {model.visual_encoder.proj_w,
                       model.visual_encoder.layers[0].wq, model.mask_token,
                       model.fusion.w_f, model.predictor.u,
                       model.decoder.k1},
                      10 * tol);
       }});

  std::vector<OpCheck> results;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    OpCheck oc;
    oc.op = entries[e].op;
    oc.passed = true;
    for (std::size_t inst = 0; inst < instances; ++inst) {
      auto rng = make_rng(derive_seed(0xACCE57, e, inst));
      GradCheckReport r = entries[e].build(rng);
      oc.max_rel_err = std::max(oc.max_rel_err, r.max_rel_err);
      oc.passed = oc.passed && r.passed;
    }
    results.push_back(std::move(oc));
  }
  return results;
}

} // namespace amda
