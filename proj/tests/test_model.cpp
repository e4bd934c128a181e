#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "amda/model.hpp"
#include "amda/rng.hpp"

using namespace amda;

namespace {

ModelConfig small_config() {
  ModelConfig mc;
  mc.visual_dim = 6;
  mc.text_dim = 5;
  mc.hidden_dim = 8;
  mc.heads = 2;
  mc.encoder_layers = 2;
  mc.dropout_rate = 0.3;
  return mc;
}

FeatureSequence random_seq(std::mt19937_64& rng, std::size_t n,
                           std::size_t n_valid, std::size_t dim,
                           Modality modality) {
  std::vector<double> v(n * dim);
  for (double& x : v) x = gaussian(rng);
  BoolMask mask(n, 0);
  for (std::size_t i = 0; i < n_valid; ++i) mask[i] = 1;
  return FeatureSequence::make(Tensor::from({n, dim}, v), mask, modality);
}

} // namespace

TEST_CASE("config validation guards the architecture") {
  ModelConfig mc = small_config();
  CHECK_NOTHROW(mc.validate());

  mc.hidden_dim = 9; // not divisible by heads=2
  CHECK_THROWS_AS(mc.validate(), ConfigError);

  mc = small_config();
  mc.heads = 0;
  CHECK_THROWS_AS(mc.validate(), ConfigError);

  mc = small_config();
  mc.dropout_rate = 1.0;
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  mc.dropout_rate = -0.1;
  CHECK_THROWS_AS(mc.validate(), ConfigError);

  mc = small_config();
  mc.visual_dim = 0;
  CHECK_THROWS_AS(mc.validate(), ConfigError);

  mc = small_config();
  mc.encoder_layers = 0;
  CHECK_THROWS_AS(mc.validate(), ConfigError);
}

TEST_CASE("initialization is seed-deterministic") {
  ModelConfig mc = small_config();
  ModelParams a = init_model(mc, 5);
  ModelParams b = init_model(mc, 5);
  ModelParams c = init_model(mc, 6);

  auto pa = named_parameters(a);
  auto pb = named_parameters(b);
  auto pc = named_parameters(c);
  REQUIRE(pa.size() == pb.size());
  REQUIRE(pa.size() == pc.size());

  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.values() == pb[i].second.values());
    if (pa[i].second.values() != pc[i].second.values()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("the parameter registry is stable, unique and complete") {
  ModelConfig mc = small_config();
  ModelParams model = init_model(mc, 1);
  auto params = named_parameters(model);

  std::set<std::string> names;
  for (const auto& [name, t] : params) {
    CHECK(names.insert(name).second); // no duplicates
    CHECK(t.requires_grad());
    CHECK(t.size() > 0);
  }

  // Spot-check the expected entries of every stage.
  for (const char* expected :
       {"visual_encoder.proj_w", "visual_encoder.layer0.wq",
        "visual_encoder.layer1.bo", "query_encoder.proj_b", "mask_token",
        "fusion.w_f", "fusion.final.wv", "predictor.start_w1", "predictor.u",
        "predictor.bias", "disc.visual.w1", "disc.textual.b2",
        "disc.fused.w2", "decoder.k1", "decoder.b2"}) {
    CHECK_MESSAGE(names.count(expected) == 1, "missing ", expected);
  }

  // Two layers per encoder, three discriminators, two decoder convolutions.
  // proj(2) + 2 layers x 8 tensors per encoder; fusion 2 + attention 8;
  // predictor 11; mask token 1; discriminators 12; decoder 4.
  const std::size_t per_encoder = 2 + 2 * 8;
  CHECK(params.size() == 2 * per_encoder + 1 + (2 + 8) + 11 + 12 + 4);

  // Registry order is identical across calls and editions share storage.
  auto again = named_parameters(model);
  REQUIRE(again.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i].first == again[i].first);
    CHECK(params[i].second.node() == again[i].second.node());
  }
}

TEST_CASE("weights are xavier-bounded and biases start at zero") {
  ModelConfig mc = small_config();
  ModelParams model = init_model(mc, 3);

  // Projection weight: fan_in = visual_dim, fan_out = hidden.
  const double bound = std::sqrt(6.0 / (6 + 8));
  bool any_nonzero = false;
  for (double x : model.visual_encoder.proj_w.values()) {
    CHECK(std::abs(x) <= bound);
    if (x != 0.0) any_nonzero = true;
  }
  CHECK(any_nonzero);
  for (double x : model.visual_encoder.proj_b.values()) CHECK(x == 0.0);
  for (double x : model.fusion.b_f.values()) CHECK(x == 0.0);
  for (double x : model.mask_token.values()) CHECK(std::abs(x) <= 0.2);
  CHECK(model.mask_token.size() == mc.visual_dim);
}

TEST_CASE("a grounding forward produces the documented shapes") {
  ModelConfig mc = small_config();
  ModelParams model = init_model(mc, 9);
  auto rng = make_rng(17);
  FeatureSequence video = random_seq(rng, 10, 7, 6, Modality::visual);
  FeatureSequence query = random_seq(rng, 5, 4, 5, Modality::textual);

  auto fwd_rng = make_rng(2);
  SampleForward f = forward_grounding(model, video, query, fwd_rng, false);
  CHECK(f.visual_encoded.shape() == Shape{10, 8});
  CHECK(f.query_encoded.shape() == Shape{5, 8});
  CHECK(f.fused.shape() == Shape{10, 8});
  CHECK(f.final_repr.shape() == Shape{10, 8});
  CHECK(f.map.scores.shape() == Shape{10, 10});

  // Scores live in (0,1) above the diagonal and are zero below it.
  const auto& s = f.map.scores.values();
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      const double x = s[i * 10 + j];
      if (j < i) {
        CHECK(x == 0.0);
      } else if (i < 7 && j < 7) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
      }
    }
  }

  // Padded encoder rows stay zero.
  const auto& enc = f.visual_encoded.values();
  for (std::size_t i = 7; i < 10; ++i) {
    for (std::size_t j = 0; j < 8; ++j) CHECK(enc[i * 8 + j] == 0.0);
  }
}

TEST_CASE("eval-mode forwards ignore the generator state") {
  ModelConfig mc = small_config();
  ModelParams model = init_model(mc, 9);
  auto rng = make_rng(31);
  FeatureSequence video = random_seq(rng, 9, 9, 6, Modality::visual);
  FeatureSequence query = random_seq(rng, 4, 4, 5, Modality::textual);

  auto r1 = make_rng(1);
  auto r2 = make_rng(999);
  SampleForward a = forward_grounding(model, video, query, r1, false);
  SampleForward b = forward_grounding(model, video, query, r2, false);
  CHECK(a.map.scores.values() == b.map.scores.values());

  // Training mode with the same seed repeats; different seeds diverge.
  auto r3 = make_rng(4), r4 = make_rng(4), r5 = make_rng(5);
  SampleForward c = forward_grounding(model, video, query, r3, true);
  SampleForward d = forward_grounding(model, video, query, r4, true);
  SampleForward e = forward_grounding(model, video, query, r5, true);
  CHECK(c.map.scores.values() == d.map.scores.values());
  CHECK(c.map.scores.values() != e.map.scores.values());
}

TEST_CASE("masked forwards mask the documented number of frames") {
  ModelConfig mc = small_config();
  ModelParams model = init_model(mc, 12);
  auto rng = make_rng(8);

  SUBCASE("round-to-nearest masking count") {
    // 32 valid frames at ratio 0.2 -> llround(6.4) = 6.
    FeatureSequence video = random_seq(rng, 32, 32, 6, Modality::visual);
    FeatureSequence query = random_seq(rng, 4, 4, 5, Modality::textual);
    auto r = make_rng(3);
    MaskedForward m = forward_masked(model, video, query, 0.2, r, true);
    std::size_t masked = 0;
    for (std::uint8_t b : m.masked_positions) masked += b;
    CHECK(masked == 6);
    CHECK(m.masked_positions.size() == 32);
  }

  SUBCASE("padding is never masked and outputs have raw width") {
    FeatureSequence video = random_seq(rng, 12, 8, 6, Modality::visual);
    FeatureSequence query = random_seq(rng, 4, 4, 5, Modality::textual);
    auto r = make_rng(3);
    MaskedForward m = forward_masked(model, video, query, 0.5, r, true);
    std::size_t masked = 0;
    for (std::size_t i = 0; i < m.masked_positions.size(); ++i) {
      masked += m.masked_positions[i];
      if (i >= 8) CHECK(m.masked_positions[i] == 0);
    }
    CHECK(masked == 4); // llround(0.5 * 8)
    CHECK(m.visual_encoded.shape() == Shape{12, 8});
    CHECK(m.fused.shape() == Shape{12, 8});
    CHECK(m.reconstructed.shape() == Shape{12, 6});
    CHECK(m.original.shape() == Shape{12, 6});
    // The reconstruction target is the unmasked raw input.
    CHECK(m.original.values() == video.values.values());
  }

  SUBCASE("different seeds choose different positions") {
    FeatureSequence video = random_seq(rng, 16, 16, 6, Modality::visual);
    FeatureSequence query = random_seq(rng, 4, 4, 5, Modality::textual);
    auto r1 = make_rng(3), r2 = make_rng(3), r3 = make_rng(7);
    MaskedForward a = forward_masked(model, video, query, 0.25, r1, true);
    MaskedForward b = forward_masked(model, video, query, 0.25, r2, true);
    MaskedForward c = forward_masked(model, video, query, 0.25, r3, true);
    CHECK(a.masked_positions == b.masked_positions);
    bool same = a.masked_positions == c.masked_positions;
    // 4 of 16 positions: a collision is possible but not for this seed pair.
    CHECK_FALSE(same);
  }
}

TEST_CASE("masking changes the encoding only through masked frames") {
  ModelConfig mc = small_config();
  mc.dropout_rate = 0.0; // isolate the masking effect
  ModelParams model = init_model(mc, 15);
  auto rng = make_rng(88);
  FeatureSequence video = random_seq(rng, 10, 10, 6, Modality::visual);
  FeatureSequence query = random_seq(rng, 4, 4, 5, Modality::textual);

  auto r1 = make_rng(6);
  MaskedForward m = forward_masked(model, video, query, 0.3, r1, false);
  auto r2 = make_rng(1);
  SampleForward plain = forward_grounding(model, video, query, r2, false);

  // With at least one frame replaced by the mask token, the fused features
  // must differ from the unmasked pass.
  std::size_t masked = 0;
  for (std::uint8_t b : m.masked_positions) masked += b;
  REQUIRE(masked == 3);
  CHECK(m.fused.values() != plain.fused.values());
}
