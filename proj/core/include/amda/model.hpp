#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "amda/encoder.hpp"
#include "amda/fusion.hpp"
#include "amda/grounding.hpp"
#include "amda/uda.hpp"

namespace amda {

/// Architecture hyperparameters shared by every component.
struct ModelConfig {
  std::size_t visual_dim = 24;
  std::size_t text_dim = 16;
  std::size_t hidden_dim = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  double dropout_rate = 0.4;
  double grl_weight = 1.0;

  void validate() const;
};

/// Every trainable tensor in the system.
struct ModelParams {
  ModelConfig config;
  EncoderParams visual_encoder;
  EncoderParams query_encoder;
  Tensor mask_token; ///< raw visual feature space, length visual_dim
  FusionParams fusion;
  PredictorParams predictor;
  DiscriminatorParams discriminators;
  ReconDecoderParams decoder;
};

/// Deterministic initialization: Xavier-uniform weights, zero biases, a
/// small uniform mask token. One generator seeded from `seed` is consumed
/// in registry order.
ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Every trainable parameter under a stable dotted name, in a fixed order.
/// The returned tensors share storage with the model, so optimizer writes
/// through them update the model in place.
std::vector<std::pair<std::string, Tensor>> named_parameters(
    ModelParams& model);

/// Products of one unmasked forward pass for a single sample.
struct SampleForward {
  Tensor visual_encoded; ///< n x d
  Tensor query_encoded;  ///< m x d
  Tensor fused;          ///< n x d
  Tensor final_repr;     ///< n x d
  ScoreMap map;
};

SampleForward forward_grounding(const ModelParams& model,
                                const FeatureSequence& video,
                                const FeatureSequence& query,
                                std::mt19937_64& rng, bool training);

/// Products of a masked forward pass: the masked video re-encoded and
/// re-fused (with a freshly encoded query), then decoded back to the raw
/// feature space.
struct MaskedForward {
  BoolMask masked_positions;
  Tensor visual_encoded; ///< n x d, encoding of the masked video
  Tensor fused;          ///< n x d
  Tensor reconstructed;  ///< n x visual_dim
  Tensor original;       ///< raw reconstruction target
};

MaskedForward forward_masked(const ModelParams& model,
                             const FeatureSequence& video,
                             const FeatureSequence& query, double mask_ratio,
                             std::mt19937_64& rng, bool training);

} // namespace amda
