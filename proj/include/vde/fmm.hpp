#pragma once

#include <array>

#include "vde/attention.hpp"

namespace vde {

/// Query, key and value mixing weights of one mixing layer. A coefficient
/// that is not learnable is held as a constant tensor and receives no update.
struct MixCoefficients {
  Tensor alpha, beta, gamma;

  static MixCoefficients create(double alpha = 0.5, double beta = 0.5, double gamma = 0.5,
                                std::array<bool, 3> learnable = {true, true, true});
  std::array<double, 3> values() const { return {alpha.item(), beta.item(), gamma.item()}; }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Projection triple without the output matrix.
struct QkvParams {
  LinearParams query, key, value;

  static QkvParams create(std::size_t channels, std::size_t projection, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MixingLayerParams {
  LayerNormParams norm_encoder;  // C_E
  LayerNormParams norm_decoder;  // C_D'
  QkvParams encoder;             // C_E -> P
  QkvParams decoder;             // C_D' -> P
  LayerNormParams query_norm_encoder, query_norm_decoder;
  LayerNormParams key_norm_encoder, key_norm_decoder;
  LinearParams output;           // P -> C_D'
  PositionBiasTable bias;
  MixCoefficients mix;
  LayerNormParams norm_mlp;
  MlpParams mlp;

  static MixingLayerParams create(std::size_t encoder_channels, std::size_t decoder_channels,
                                  const WindowConfig& cfg, Rng& rng,
                                  const MixCoefficients& mix = MixCoefficients::create());
  std::size_t decoder_channels() const { return norm_decoder.gain.numel(); }
  void collect(const std::string& prefix, ParamList& out) const;
  void zero_residual_branches();
};

struct MixedQkv {
  Tensor query, key, value;
};

/// Q = a*LN(Q_E) + (1-a)*LN(Q_D), K likewise with b, V = g*V_E + (1-g)*V_D,
/// from already normalized and partitioned token rows.
MixedQkv mixed_qkv(const Tensor& encoder_windowed, const Tensor& decoder_windowed,
                   const MixingLayerParams& params);

/// Token-form mixing layer over an H x W grid; returns updated decoder tokens.
Tensor mixing_layer_tokens(const Tensor& encoder_tokens, const Tensor& decoder_tokens,
                           std::size_t height, std::size_t width, const MixingLayerParams& params,
                           std::size_t shift, ScaleMode mode = ScaleMode::head_dim);

/// Z_E [C_E x H x W], Z_D [C_D' x H x W] -> [C_D' x H x W].
Tensor mixing_layer(const Tensor& encoder, const Tensor& decoder, const MixingLayerParams& params,
                    std::size_t shift, ScaleMode mode = ScaleMode::head_dim);

struct FmmConfig {
  std::size_t encoder_channels = 0;
  std::size_t decoder_channels = 0;  // incoming, divisible by 4
  std::size_t hidden_channels = 0;   // width of the mixing layers
  std::size_t output_channels = 0;   // a final projection is added when != hidden
  WindowConfig window;
};

struct FmmParams {
  FmmConfig config;
  LinearParams upsample;  // C_D/4 -> hidden
  std::array<MixingLayerParams, 2> layers;
  LinearParams output;    // hidden -> output, undefined when widths match

  static FmmParams create(const FmmConfig& cfg, Rng& rng,
                          const std::array<MixCoefficients, 2>& mix = {MixCoefficients::create(),
                                                                       MixCoefficients::create()});
  void collect(const std::string& prefix, ParamList& out) const;
  void zero_residual_branches();
};

/// Z_E [C_E x H x W], Z_D [C_D x H/2 x W/2] -> [C_out x H x W].
Tensor fmm_forward(const Tensor& encoder, const Tensor& decoder, const FmmParams& params,
                   ScaleMode mode = ScaleMode::head_dim);

}  // namespace vde
