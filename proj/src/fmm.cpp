#include "vde/fmm.hpp"

namespace vde {

MixCoefficients MixCoefficients::create(double alpha, double beta, double gamma,
                                        std::array<bool, 3> learnable) {
  return {Tensor::scalar(alpha, learnable[0]), Tensor::scalar(beta, learnable[1]),
          Tensor::scalar(gamma, learnable[2])};
}

void MixCoefficients::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".alpha", alpha, false});
  out.push_back({prefix + ".beta", beta, false});
  out.push_back({prefix + ".gamma", gamma, false});
}

QkvParams QkvParams::create(std::size_t channels, std::size_t projection, Rng& rng) {
  return {LinearParams::create(channels, projection, rng),
          LinearParams::create(channels, projection, rng),
          LinearParams::create(channels, projection, rng)};
}

void QkvParams::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
}

MixingLayerParams MixingLayerParams::create(std::size_t encoder_channels,
                                            std::size_t decoder_channels, const WindowConfig& cfg,
                                            Rng& rng, const MixCoefficients& mix) {
  if (decoder_channels % cfg.heads != 0) {
    throw ShapeError("mixing layer: " + std::to_string(decoder_channels) +
                     " channels not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  const std::size_t p = decoder_channels;
  MixingLayerParams m;
  m.norm_encoder = LayerNormParams::create(encoder_channels);
  m.norm_decoder = LayerNormParams::create(decoder_channels);
  m.encoder = QkvParams::create(encoder_channels, p, rng);
  m.decoder = QkvParams::create(decoder_channels, p, rng);
  m.query_norm_encoder = LayerNormParams::create(p);
  m.query_norm_decoder = LayerNormParams::create(p);
  m.key_norm_encoder = LayerNormParams::create(p);
  m.key_norm_decoder = LayerNormParams::create(p);
  m.output = LinearParams::create(p, decoder_channels, rng);
  m.bias = PositionBiasTable::create(cfg.window, cfg.heads, rng);
  m.mix = mix;
  m.norm_mlp = LayerNormParams::create(decoder_channels);
  m.mlp = MlpParams::create(decoder_channels, kMlpRatio * decoder_channels, rng);
  return m;
}

void MixingLayerParams::collect(const std::string& prefix, ParamList& out) const {
  norm_encoder.collect(prefix + ".norm_encoder", out);
  norm_decoder.collect(prefix + ".norm_decoder", out);
  encoder.collect(prefix + ".encoder", out);
  decoder.collect(prefix + ".decoder", out);
  query_norm_encoder.collect(prefix + ".query_norm_encoder", out);
  query_norm_decoder.collect(prefix + ".query_norm_decoder", out);
  key_norm_encoder.collect(prefix + ".key_norm_encoder", out);
  key_norm_decoder.collect(prefix + ".key_norm_decoder", out);
  output.collect(prefix + ".output", out);
  bias.collect(prefix + ".bias", out);
  mix.collect(prefix + ".mix", out);
  norm_mlp.collect(prefix + ".norm_mlp", out);
  mlp.collect(prefix + ".mlp", out);
}

void MixingLayerParams::zero_residual_branches() {
  output.zero();
  mlp.fc2.zero();
}

MixedQkv mixed_qkv(const Tensor& encoder_windowed, const Tensor& decoder_windowed,
                   const MixingLayerParams& p) {
  auto q = lerp(p.query_norm_encoder(p.encoder.query(encoder_windowed)),
                p.query_norm_decoder(p.decoder.query(decoder_windowed)), p.mix.alpha);
  auto k = lerp(p.key_norm_encoder(p.encoder.key(encoder_windowed)),
                p.key_norm_decoder(p.decoder.key(decoder_windowed)), p.mix.beta);
  auto v = lerp(p.encoder.value(encoder_windowed), p.decoder.value(decoder_windowed), p.mix.gamma);
  return {q, k, v};
}

Tensor mixing_layer_tokens(const Tensor& encoder_tokens, const Tensor& decoder_tokens,
                           std::size_t height, std::size_t width, const MixingLayerParams& params,
                           std::size_t shift, ScaleMode mode) {
  if (encoder_tokens.dim(0) != height * width || decoder_tokens.dim(0) != height * width) {
    throw ShapeError("mixing_layer: token counts " + std::to_string(encoder_tokens.dim(0)) + " / " +
                     std::to_string(decoder_tokens.dim(0)) + " for a " + std::to_string(height) +
                     "x" + std::to_string(width) + " grid");
  }
  const auto plan = make_window_plan(height, width, params.bias.window, shift);
  auto enc = partition_windows(params.norm_encoder(encoder_tokens), plan);
  auto dec = partition_windows(params.norm_decoder(decoder_tokens), plan);
  auto [q, k, v] = mixed_qkv(enc, dec, params);
  const std::size_t heads = params.bias.heads();
  const double scale = attention_scale(mode, q.dim(1) / heads, plan.tokens);
  auto z = window_attention(q, k, v, params.bias.table, attention_layout(plan, heads, scale));
  auto x = add(decoder_tokens, merge_windows(params.output(z), plan));
  return add(x, params.mlp(params.norm_mlp(x)));
}

Tensor mixing_layer(const Tensor& encoder, const Tensor& decoder, const MixingLayerParams& params,
                    std::size_t shift, ScaleMode mode) {
  if (encoder.rank() != 3 || decoder.rank() != 3 || encoder.dim(1) != decoder.dim(1) ||
      encoder.dim(2) != decoder.dim(2)) {
    throw ShapeError("mixing_layer: encoder " + shape_to_string(encoder.shape()) + " vs decoder " +
                     shape_to_string(decoder.shape()));
  }
  const std::size_t h = decoder.dim(1), w = decoder.dim(2);
  return from_tokens(
      mixing_layer_tokens(to_tokens(encoder), to_tokens(decoder), h, w, params, shift, mode), h, w);
}

FmmParams FmmParams::create(const FmmConfig& cfg, Rng& rng,
                            const std::array<MixCoefficients, 2>& mix) {
  if (cfg.decoder_channels % 4 != 0) {
    throw ShapeError("fmm: decoder channels " + std::to_string(cfg.decoder_channels) +
                     " not divisible by 4");
  }
  FmmParams p;
  p.config = cfg;
  p.upsample = LinearParams::create(cfg.decoder_channels / 4, cfg.hidden_channels, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    p.layers[i] = MixingLayerParams::create(cfg.encoder_channels, cfg.hidden_channels, cfg.window,
                                            rng, mix[i]);
  }
  if (cfg.output_channels != cfg.hidden_channels) {
    p.output = LinearParams::create(cfg.hidden_channels, cfg.output_channels, rng);
  }
  return p;
}

void FmmParams::collect(const std::string& prefix, ParamList& out) const {
  upsample.collect(prefix + ".upsample", out);
  layers[0].collect(prefix + ".mix0", out);
  layers[1].collect(prefix + ".mix1", out);
  if (output.weight.defined()) output.collect(prefix + ".output", out);
}

void FmmParams::zero_residual_branches() {
  for (auto& l : layers) l.zero_residual_branches();
}

Tensor fmm_forward(const Tensor& encoder, const Tensor& decoder, const FmmParams& params,
                   ScaleMode mode) {
  if (encoder.rank() != 3 || decoder.rank() != 3 || encoder.dim(1) != 2 * decoder.dim(1) ||
      encoder.dim(2) != 2 * decoder.dim(2)) {
    throw ShapeError("fmm: encoder " + shape_to_string(encoder.shape()) +
                     " is not twice the decoder " + shape_to_string(decoder.shape()));
  }
  const std::size_t h = encoder.dim(1), w = encoder.dim(2);
  auto enc = to_tokens(encoder);
  auto x = params.upsample(to_tokens(pixel_shuffle(decoder, 2)));
  const std::size_t window = params.config.window.window;
  x = mixing_layer_tokens(enc, x, h, w, params.layers[0], 0, mode);
  x = mixing_layer_tokens(enc, x, h, w, params.layers[1], window / 2, mode);
  if (params.output.weight.defined()) x = params.output(x);
  return from_tokens(x, h, w);
}

}  // namespace vde
