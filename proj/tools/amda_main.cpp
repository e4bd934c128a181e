#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "amda/checkpoint.hpp"
#include "amda/corpus.hpp"
#include "amda/experiments.hpp"
#include "amda/metrics.hpp"
#include "amda/trainer.hpp"

namespace fs = std::filesystem;
using namespace amda;

namespace {

/// The AMDA_OUT_DIR environment variable overrides any output directory
/// given on the command line.
std::string resolve_out_dir(const std::string& cli_value) {
  if (const char* env = std::getenv("AMDA_OUT_DIR");
      env != nullptr && *env != '\0') {
    return env;
  }
  if (cli_value.empty()) {
    throw ConfigError(
        "no output directory: pass <out-dir> or set AMDA_OUT_DIR");
  }
  return cli_value;
}

TrainConfig load_train_config(const std::string& path) {
  return TrainConfig::from_config(ConfigFile::parse_file(path));
}

std::vector<std::uint64_t> resolve_seeds(
    const std::vector<std::uint64_t>& flag, const TrainConfig& cfg) {
  return flag.empty() ? std::vector<std::uint64_t>{cfg.seed} : flag;
}

void print_report(const MetricsReport& report) {
  std::printf("domain      %s\n", report.domain.c_str());
  std::printf("samples     %zu\n", report.sample_count);
  std::printf("config_hash %s\n", report.config_hash.c_str());
  for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
    std::printf("R@1 IoU=%.1f  %.2f\n", report.thresholds[i],
                report.recall[i]);
  }
}

void print_aggregates(const ExperimentResult& result) {
  std::printf("%-24s %-8s %-6s %8s %8s %8s\n", "label", "domain", "iou",
              "median", "min", "max");
  for (const AggregateRow& row : result.aggregates) {
    std::printf("%-24s %-8s %-6.1f %8.2f %8.2f %8.2f\n", row.label.c_str(),
                row.domain.c_str(), row.threshold, row.median, row.min,
                row.max);
  }
}

int cmd_generate(const std::string& scenario_path,
                 const std::string& out_dir) {
  const ScenarioSpec spec =
      ScenarioSpec::from_config(ConfigFile::parse_file(scenario_path));
  const std::string dir = resolve_out_dir(out_dir);
  GeneratedCorpus corpus = generate_corpus(spec);
  write_corpus(corpus, dir);
  std::printf("wrote %zu samples (%zu train + %zu test per domain) to %s\n",
              corpus.samples.size(), spec.train_per_domain,
              spec.test_per_domain, dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_dir,
              const std::string& out_dir,
              const std::vector<std::uint64_t>& seeds_flag, bool force) {
  const TrainConfig cfg = load_train_config(config_path);
  const std::string dir = resolve_out_dir(out_dir);
  const std::vector<LabeledConfig> grid = {{"train", cfg}};
  ExperimentResult result =
      run_experiment("train", grid, corpus_dir, dir, resolve_seeds(seeds_flag, cfg),
                     force, /*save_checkpoints=*/true);
  for (const RunOutcome& run : result.runs) {
    std::printf("run %s seed %llu:\n", run.label.c_str(),
                static_cast<unsigned long long>(run.seed));
    print_report(run.target_test);
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_dir,
             const std::string& split, const std::string& domain) {
  RestoredRun restored = restore_run(load_checkpoint(checkpoint_path));
  Corpus corpus = load_corpus(corpus_dir, Access::eval,
                              domain_from_string(domain),
                              split_from_string(split));
  std::vector<const LoadedSample*> samples;
  samples.reserve(corpus.samples.size());
  for (const LoadedSample& s : corpus.samples) samples.push_back(&s);
  MetricsReport report =
      evaluate_model(restored.model, samples, {0.3, 0.5, 0.7});
  report.domain = domain;
  report.regime = to_string(restored.config.regime);
  report.seed = restored.config.seed;
  report.config_hash = hash_hex(restored.config_echo.hash());
  print_report(report);
  return 0;
}

int cmd_gradcheck(double tol, std::size_t instances) {
  const std::vector<OpCheck> results = gradcheck_suite(instances, tol);
  bool all_passed = true;
  std::printf("%-28s %-12s result\n", "op", "max_rel_err");
  for (const OpCheck& oc : results) {
    std::printf("%-28s %-12.3e %s\n", oc.op.c_str(), oc.max_rel_err,
                oc.passed ? "pass" : "FAIL");
    all_passed = all_passed && oc.passed;
  }
  std::printf("%zu ops, %zu instances each: %s\n", results.size(), instances,
              all_passed ? "all passed" : "FAILURES");
  if (!all_passed) {
    throw NumericError("gradient checks failed");
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& corpus_dir,
               const std::string& out_dir,
               const std::vector<std::uint64_t>& seeds_flag, bool force) {
  const TrainConfig cfg = load_train_config(config_path);
  const std::string dir = resolve_out_dir(out_dir);
  const std::vector<std::uint64_t> seeds = resolve_seeds(seeds_flag, cfg);

  std::vector<LabeledConfig> grid = regime_grid(cfg);
  const std::vector<LabeledConfig> disc = discriminator_grid(cfg);
  grid.insert(grid.end(), disc.begin(), disc.end());

  ExperimentResult result =
      run_experiment("ablate", grid, corpus_dir, dir, seeds, force);
  print_aggregates(result);
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& corpus_dir,
              const std::string& out_dir, const std::string& param,
              const std::vector<double>& values_flag,
              const std::vector<std::uint64_t>& seeds_flag, bool force) {
  const TrainConfig cfg = load_train_config(config_path);
  const std::string dir = resolve_out_dir(out_dir);
  const std::vector<double> values =
      values_flag.empty() ? default_sweep_values() : values_flag;
  ExperimentResult result =
      run_experiment("sweep", sweep_grid(cfg, param, values), corpus_dir, dir,
                     resolve_seeds(seeds_flag, cfg), force);
  print_aggregates(result);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial multi-modal domain adaptation for temporal "
               "video grounding on synthetic corpora"};
  app.require_subcommand(1);

  std::string scenario_path, config_path, corpus_dir, out_dir;
  std::string checkpoint_path, split = "test", domain = "target";
  std::string param;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;
  bool force = false;
  double tol = 1e-4;
  std::size_t instances = 3;

  CLI::App* generate =
      app.add_subcommand("generate", "Generate a synthetic two-domain corpus");
  generate->add_option("scenario", scenario_path, "Scenario config file")
      ->required();
  generate->add_option("out-dir", out_dir, "Output directory");

  CLI::App* train_cmd =
      app.add_subcommand("train", "Train one model and save its checkpoint");
  train_cmd->add_option("config", config_path, "Training config file")
      ->required();
  train_cmd->add_option("corpus", corpus_dir, "Corpus directory")->required();
  train_cmd->add_option("out-dir", out_dir, "Output directory");
  train_cmd->add_option("--seeds", seeds, "Seeds to run (default: config)");
  train_cmd->add_flag("--force", force, "Re-run an already-recorded config");

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
  eval_cmd->add_option("checkpoint", checkpoint_path, "Checkpoint file")
      ->required();
  eval_cmd->add_option("corpus", corpus_dir, "Corpus directory")->required();
  eval_cmd->add_option("--split", split, "train or test (default test)");
  eval_cmd->add_option("--domain", domain,
                       "source or target (default target)");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference checks of every op");
  gradcheck->add_option("--tol", tol, "Relative-error tolerance");
  gradcheck->add_option("--instances", instances,
                        "Random instances per op (default 3)");

  CLI::App* ablate = app.add_subcommand(
      "ablate", "Run the regime and discriminator ablation grids");
  ablate->add_option("config", config_path, "Training config file")
      ->required();
  ablate->add_option("corpus", corpus_dir, "Corpus directory")->required();
  ablate->add_option("out-dir", out_dir, "Output directory");
  ablate->add_option("--seeds", seeds, "Seeds to run (default: config)");
  ablate->add_flag("--force", force, "Re-run an already-recorded experiment");

  CLI::App* sweep =
      app.add_subcommand("sweep", "Sweep the margin or the mask ratio");
  sweep->add_option("config", config_path, "Training config file")->required();
  sweep->add_option("corpus", corpus_dir, "Corpus directory")->required();
  sweep->add_option("out-dir", out_dir, "Output directory");
  sweep->add_option("--param", param, "margin or mask-ratio")->required();
  sweep->add_option("--values", values,
                    "Swept values (default 0.1 0.2 0.3 0.4 0.5)");
  sweep->add_option("--seeds", seeds, "Seeds to run (default: config)");
  sweep->add_flag("--force", force, "Re-run an already-recorded experiment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1; // anything but --help is a usage error
  }

  try {
    if (generate->parsed()) return cmd_generate(scenario_path, out_dir);
    if (train_cmd->parsed()) {
      return cmd_train(config_path, corpus_dir, out_dir, seeds, force);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(checkpoint_path, corpus_dir, split, domain);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(tol, instances);
    if (ablate->parsed()) {
      return cmd_ablate(config_path, corpus_dir, out_dir, seeds, force);
    }
    if (sweep->parsed()) {
      return cmd_sweep(config_path, corpus_dir, out_dir, param, values, seeds,
                       force);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
