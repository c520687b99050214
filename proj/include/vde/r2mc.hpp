#pragma once

#include <optional>

#include "vde/attention.hpp"

namespace vde {

inline constexpr double kAnchorInit = 2e-2;
inline constexpr double kMetricLogClamp = 10.0;

/// Where a conversion layer takes its attention values from.
struct ConversionValue {
  enum class Kind { anchor, carried, projected };
  Kind kind = Kind::projected;
  /// anchor: window_tokens x P; carried: (H*W) x P; projected: unused.
  Tensor matrix;

  static ConversionValue anchor(Tensor l) { return {Kind::anchor, std::move(l)}; }
  static ConversionValue carried(Tensor map) { return {Kind::carried, std::move(map)}; }
  static ConversionValue projected() { return {Kind::projected, Tensor()}; }
};

struct ConversionLayerParams {
  LayerNormParams norm;
  LinearParams query, key;
  LinearParams value;  // only without an anchor
  Tensor anchor;       // w^2 x P, heads side by side; first layer only
  LinearParams output;
  PositionBiasTable bias;
  LayerNormParams norm_mlp;
  MlpParams mlp;

  static ConversionLayerParams create(std::size_t channels, const WindowConfig& cfg, bool with_anchor,
                                      bool with_value, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  void zero_residual_branches();
};

struct ConversionResult {
  Tensor tokens;    // (H*W) x C
  Tensor attended;  // (H*W) x P, the attended values before output projection
};

ConversionResult conversion_layer_tokens(const Tensor& tokens, std::size_t height,
                                         std::size_t width, const ConversionLayerParams& params,
                                         const ConversionValue& value, std::size_t shift,
                                         ScaleMode mode = ScaleMode::head_dim);

/// C x H x W feature; returns the updated feature in token form plus the
/// attended values.
ConversionResult conversion_layer(const Tensor& feature, const ConversionLayerParams& params,
                                  const ConversionValue& value, std::size_t shift,
                                  ScaleMode mode = ScaleMode::head_dim);

struct R2mcConfig {
  std::size_t input_channels = 32;
  std::size_t width = 32;  // an input projection is added when != input_channels
  WindowConfig window;
  bool no_anchor = false;
};

struct R2mcParams {
  R2mcConfig config;
  LinearParams input;  // undefined when widths match
  std::array<ConversionLayerParams, 2> conversion;
  TransformerBlockParams block;
  LinearParams head;   // width -> 1

  static R2mcParams create(const R2mcConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  std::size_t count() const;
};

struct R2mcOutput {
  Tensor depth;    // 1 x h x w, strictly positive
  Tensor feature;  // Z_M, width x h x w
};

/// Z_R [C x h x w] -> metric depth at the same resolution.
R2mcOutput r2mc_forward(const Tensor& relative, const R2mcParams& params,
                        ScaleMode mode = ScaleMode::head_dim);

/// exp(clamp(x, -10, 10)).
Tensor metric_activation(const Tensor& x);

}  // namespace vde
