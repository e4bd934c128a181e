#include "amda/model.hpp"

#include <cmath>

#include "amda/rng.hpp"

namespace amda {

void ModelConfig::validate() const {
  if (visual_dim == 0 || text_dim == 0) {
    throw ConfigError("model: feature dimensions must be positive");
  }
  if (hidden_dim == 0 || heads == 0 || hidden_dim % heads != 0) {
    throw ConfigError("model: hidden_dim (" + std::to_string(hidden_dim) +
                      ") must be a positive multiple of heads (" +
                      std::to_string(heads) + ")");
  }
  if (encoder_layers == 0) {
    throw ConfigError("model: encoder_layers must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("model: dropout_rate must lie in [0, 1), got " +
                      std::to_string(dropout_rate));
  }
  if (!(grl_weight > 0.0)) {
    throw ConfigError("model: grl_weight must be positive, got " +
                      std::to_string(grl_weight));
  }
}

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Shape shape,
              std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = a * (2.0 * uniform_double(rng) - 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

AttentionLayerParams init_attention(std::size_t d, std::mt19937_64& rng) {
  AttentionLayerParams l;
  l.wq = xavier(d, d, {d, d}, rng);
  l.bq = Tensor::zeros({d}, true);
  l.wk = xavier(d, d, {d, d}, rng);
  l.bk = Tensor::zeros({d}, true);
  l.wv = xavier(d, d, {d, d}, rng);
  l.bv = Tensor::zeros({d}, true);
  l.wo = xavier(d, d, {d, d}, rng);
  l.bo = Tensor::zeros({d}, true);
  return l;
}

EncoderParams init_encoder(std::size_t in_dim, const ModelConfig& cfg,
                           std::mt19937_64& rng) {
  EncoderParams enc;
  enc.proj_w = xavier(in_dim, cfg.hidden_dim, {in_dim, cfg.hidden_dim}, rng);
  enc.proj_b = Tensor::zeros({cfg.hidden_dim}, true);
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    enc.layers.push_back(init_attention(cfg.hidden_dim, rng));
  }
  enc.heads = cfg.heads;
  enc.dropout_rate = cfg.dropout_rate;
  return enc;
}

MlpParams init_mlp(std::size_t d, std::mt19937_64& rng) {
  MlpParams m;
  m.w1 = xavier(d, d, {d, d}, rng);
  m.b1 = Tensor::zeros({d}, true);
  m.w2 = xavier(d, 1, {d, 1}, rng);
  m.b2 = Tensor::zeros({1}, true);
  return m;
}

void register_attention(std::vector<std::pair<std::string, Tensor>>& out,
                        const std::string& prefix, AttentionLayerParams& l) {
  out.emplace_back(prefix + ".wq", l.wq);
  out.emplace_back(prefix + ".bq", l.bq);
  out.emplace_back(prefix + ".wk", l.wk);
  out.emplace_back(prefix + ".bk", l.bk);
  out.emplace_back(prefix + ".wv", l.wv);
  out.emplace_back(prefix + ".bv", l.bv);
  out.emplace_back(prefix + ".wo", l.wo);
  out.emplace_back(prefix + ".bo", l.bo);
}

void register_encoder(std::vector<std::pair<std::string, Tensor>>& out,
                      const std::string& prefix, EncoderParams& enc) {
  out.emplace_back(prefix + ".proj_w", enc.proj_w);
  out.emplace_back(prefix + ".proj_b", enc.proj_b);
  for (std::size_t i = 0; i < enc.layers.size(); ++i) {
    register_attention(out, prefix + ".layer" + std::to_string(i),
                       enc.layers[i]);
  }
}

void register_mlp(std::vector<std::pair<std::string, Tensor>>& out,
                  const std::string& prefix, MlpParams& m) {
  out.emplace_back(prefix + ".w1", m.w1);
  out.emplace_back(prefix + ".b1", m.b1);
  out.emplace_back(prefix + ".w2", m.w2);
  out.emplace_back(prefix + ".b2", m.b2);
}

} // namespace

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = make_rng(derive_seed(seed, /*stream=*/0x1717));
  const std::size_t d = cfg.hidden_dim;

  ModelParams m;
  m.config = cfg;
  m.visual_encoder = init_encoder(cfg.visual_dim, cfg, rng);
  m.query_encoder = init_encoder(cfg.text_dim, cfg, rng);

  {
    std::vector<double> token(cfg.visual_dim);
    for (double& x : token) x = 0.2 * (2.0 * uniform_double(rng) - 1.0);
    m.mask_token = Tensor::from({cfg.visual_dim}, std::move(token), true);
  }

  m.fusion.w_f = xavier(4 * d, d, {4 * d, d}, rng);
  m.fusion.b_f = Tensor::zeros({d}, true);
  m.fusion.final_layer = init_attention(d, rng);
  m.fusion.heads = cfg.heads;
  m.fusion.dropout_rate = cfg.dropout_rate;

  m.predictor.start_w1 = xavier(d, d, {d, d}, rng);
  m.predictor.start_b1 = Tensor::zeros({d}, true);
  m.predictor.start_w2 = xavier(d, d, {d, d}, rng);
  m.predictor.start_b2 = Tensor::zeros({d}, true);
  m.predictor.end_w1 = xavier(d, d, {d, d}, rng);
  m.predictor.end_b1 = Tensor::zeros({d}, true);
  m.predictor.end_w2 = xavier(d, d, {d, d}, rng);
  m.predictor.end_b2 = Tensor::zeros({d}, true);
  m.predictor.u = xavier(d, d, {d, d}, rng);
  m.predictor.w = xavier(d, 1, {d}, rng);
  m.predictor.bias = Tensor::zeros({1}, true);

  m.discriminators.visual = init_mlp(d, rng);
  m.discriminators.textual = init_mlp(d, rng);
  m.discriminators.fused = init_mlp(d, rng);
  m.discriminators.grl_weight = cfg.grl_weight;

  m.decoder.k1 = xavier(3 * d, 3 * d, {3, d, d}, rng);
  m.decoder.b1 = Tensor::zeros({d}, true);
  m.decoder.k2 = xavier(3 * d, 3 * cfg.visual_dim, {3, d, cfg.visual_dim}, rng);
  m.decoder.b2 = Tensor::zeros({cfg.visual_dim}, true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> named_parameters(
    ModelParams& model) {
  std::vector<std::pair<std::string, Tensor>> out;
  register_encoder(out, "visual_encoder", model.visual_encoder);
  register_encoder(out, "query_encoder", model.query_encoder);
  out.emplace_back("mask_token", model.mask_token);
  out.emplace_back("fusion.w_f", model.fusion.w_f);
  out.emplace_back("fusion.b_f", model.fusion.b_f);
  register_attention(out, "fusion.final", model.fusion.final_layer);
  out.emplace_back("predictor.start_w1", model.predictor.start_w1);
  out.emplace_back("predictor.start_b1", model.predictor.start_b1);
  out.emplace_back("predictor.start_w2", model.predictor.start_w2);
  out.emplace_back("predictor.start_b2", model.predictor.start_b2);
  out.emplace_back("predictor.end_w1", model.predictor.end_w1);
  out.emplace_back("predictor.end_b1", model.predictor.end_b1);
  out.emplace_back("predictor.end_w2", model.predictor.end_w2);
  out.emplace_back("predictor.end_b2", model.predictor.end_b2);
  out.emplace_back("predictor.u", model.predictor.u);
  out.emplace_back("predictor.w", model.predictor.w);
  out.emplace_back("predictor.bias", model.predictor.bias);
  register_mlp(out, "disc.visual", model.discriminators.visual);
  register_mlp(out, "disc.textual", model.discriminators.textual);
  register_mlp(out, "disc.fused", model.discriminators.fused);
  out.emplace_back("decoder.k1", model.decoder.k1);
  out.emplace_back("decoder.b1", model.decoder.b1);
  out.emplace_back("decoder.k2", model.decoder.k2);
  out.emplace_back("decoder.b2", model.decoder.b2);
  return out;
}

SampleForward forward_grounding(const ModelParams& model,
                                const FeatureSequence& video,
                                const FeatureSequence& query,
                                std::mt19937_64& rng, bool training) {
  SampleForward f;
  f.visual_encoded = encode(video, model.visual_encoder, rng, training);
  f.query_encoded = encode(query, model.query_encoder, rng, training);
  SimilarityMatrices sims = similarity(f.visual_encoded, f.query_encoded,
                                       video.valid, query.valid);
  CrossAttention attn =
      context_query_attention(f.visual_encoded, f.query_encoded, sims);
  f.fused = fuse(f.visual_encoded, attn, model.fusion, video.valid);
  f.final_repr = finalize(f.fused, model.fusion, video.valid, rng, training);
  f.map = score_map(f.final_repr, model.predictor);
  return f;
}

MaskedForward forward_masked(const ModelParams& model,
                             const FeatureSequence& video,
                             const FeatureSequence& query, double mask_ratio,
                             std::mt19937_64& rng, bool training) {
  MaskedVideo masked = mask_video(video, mask_ratio, model.mask_token, rng);

  MaskedForward f;
  f.masked_positions = masked.masked_positions;
  f.original = masked.original;
  f.visual_encoded = encode(masked.masked, model.visual_encoder, rng, training);
  Tensor query_encoded = encode(query, model.query_encoder, rng, training);
  SimilarityMatrices sims = similarity(f.visual_encoded, query_encoded,
                                       masked.masked.valid, query.valid);
  CrossAttention attn =
      context_query_attention(f.visual_encoded, query_encoded, sims);
  f.fused = fuse(f.visual_encoded, attn, model.fusion, masked.masked.valid);
  f.reconstructed = reconstruct(f.visual_encoded, f.fused, model.decoder);
  return f;
}

} // namespace amda
