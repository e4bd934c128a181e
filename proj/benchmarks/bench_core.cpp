#include <benchmark/benchmark.h>

#include <amda/corpus.hpp>
#include <amda/grounding.hpp>
#include <amda/model.hpp>
#include <amda/rng.hpp>
#include <amda/tensor.hpp>
#include <amda/trainer.hpp>

#include <filesystem>
#include <random>
#include <vector>

namespace {

using namespace amda;

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> values(rows * cols);
  for (double& v : values) {
    v = uniform_double(rng) - 0.5;
  }
  return Tensor::from({rows, cols}, values);
}

void bm_matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1);
  const Tensor b = random_matrix(n, n, 2);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.node());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n * n * n));
}

void bm_matmul_with_gradients(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    Tensor a = random_matrix(n, n, 1);
    Tensor b = random_matrix(n, n, 2);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor loss = sum(matmul(a, b));
    tape.backward(loss);
    benchmark::DoNotOptimize(a.node());
  }
}

ModelConfig bench_model_config() {
  ModelConfig cfg;
  cfg.visual_dim = 24;
  cfg.text_dim = 16;
  cfg.hidden_dim = 64;
  cfg.heads = 4;
  cfg.encoder_layers = 2;
  cfg.dropout_rate = 0.0;
  return cfg;
}

FeatureSequence random_sequence(std::size_t n, std::size_t dim,
                                std::uint64_t seed, Modality modality) {
  return FeatureSequence::make(random_matrix(n, dim, seed), BoolMask(n, 1),
                               modality);
}

void bm_grounding_forward(benchmark::State& state) {
  const ModelConfig cfg = bench_model_config();
  ModelParams model = init_model(cfg, 3);
  const FeatureSequence video =
      random_sequence(static_cast<std::size_t>(state.range(0)),
                      cfg.visual_dim, 4, Modality::visual);
  const FeatureSequence query =
      random_sequence(8, cfg.text_dim, 5, Modality::textual);
  for (auto _ : state) {
    std::mt19937_64 rng(9);
    SampleForward fwd =
        forward_grounding(model, video, query, rng, /*training=*/false);
    benchmark::DoNotOptimize(fwd.map.scores.node());
  }
}

void bm_score_map(benchmark::State& state) {
  const ModelConfig cfg = bench_model_config();
  ModelParams model = init_model(cfg, 3);
  const Tensor features = random_matrix(
      static_cast<std::size_t>(state.range(0)), cfg.hidden_dim, 6);
  for (auto _ : state) {
    ScoreMap map = score_map(features, model.predictor);
    benchmark::DoNotOptimize(map.scores.node());
  }
}

/// Full optimization step (forwards, backward, optimizer update) on a
/// small two-domain corpus, the shape of work one training epoch repeats.
void bm_train_step(benchmark::State& state) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "amda_bench_corpus";
  fs::remove_all(dir);
  ScenarioSpec spec;
  spec.n_frames = 24;
  spec.visual_dim = 16;
  spec.text_dim = 12;
  spec.num_classes = 4;
  spec.train_per_domain = 16;
  spec.test_per_domain = 4;
  spec.seed = 11;
  write_corpus(generate_corpus(spec), dir.string());

  const Corpus source = load_corpus(dir.string(), Access::labeled,
                                    Domain::source, Split::train);
  const Corpus target = load_corpus(dir.string(), Access::unlabeled_train,
                                    Domain::target, Split::train);

  TrainConfig cfg;
  cfg.hidden_dim = 32;
  cfg.heads = 2;
  cfg.encoder_layers = 1;
  cfg.batch_size = static_cast<std::size_t>(state.range(0));
  ModelParams model =
      init_model(cfg.model_config(spec.visual_dim, spec.text_dim), 1);
  auto params = named_parameters(model);
  OptimizerState opt = make_optimizer(params);

  DomainBatch batch;
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    batch.source.push_back(&source.samples[i]);
    batch.target.push_back(&target.samples[i]);
  }

  std::uint64_t step = 0;
  for (auto _ : state) {
    LossBreakdown losses =
        train_step(batch, model, opt, cfg, /*lr=*/1e-3, step++);
    benchmark::DoNotOptimize(losses.total);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(cfg.batch_size));
  fs::remove_all(dir);
}

BENCHMARK(bm_matmul)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(bm_matmul_with_gradients)->Arg(64);
BENCHMARK(bm_grounding_forward)->Arg(16)->Arg(32);
BENCHMARK(bm_score_map)->Arg(32)->Arg(64);
BENCHMARK(bm_train_step)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
