#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "vde/params.hpp"
#include "vde/tensor.hpp"

namespace vde {

/// Normalizer inside softmax(QK^T * s + B): s = 1/sqrt(per-head key dim) or
/// 1/sqrt(tokens per window).
enum class ScaleMode { head_dim, token_count };

double attention_scale(ScaleMode mode, std::size_t head_dim, std::size_t tokens);

struct WindowConfig {
  std::size_t window = 4;
  std::size_t shift = 0;
  std::size_t heads = 2;
};

/// Partition of an H x W token grid into (possibly padded, possibly
/// cyclically shifted) square windows.
///
/// When the map is no larger than the configured window along its shorter
/// side, the window shrinks to that side and the shift is dropped.
struct WindowPlan {
  std::size_t height = 0, width = 0;
  std::size_t configured_window = 0;
  std::size_t window = 0;  // effective
  std::size_t shift = 0;   // effective
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t padded_height = 0, padded_width = 0;
  std::size_t windows = 0;
  std::size_t tokens = 0;  // per window

  /// windows*tokens entries: source token (y*W+x) of each window slot, or
  /// kZeroIndex for padding.
  std::vector<std::size_t> partition_rows;
  /// H*W entries: window slot holding each source token.
  std::vector<std::size_t> merge_rows;
  /// windows*tokens entries: row of a configured-window-sized matrix that a
  /// slot maps to (ly*w + lx), or kZeroIndex for padding.
  std::vector<std::size_t> local_rows;
  /// tokens*tokens indices into a (2w-1)^2 relative-position table.
  std::vector<std::size_t> bias_index;
  /// Additive mask (0 / -inf) over padded keys and shifted-region crossings;
  /// empty when no entry is masked.
  std::vector<double> mask;
};

WindowPlan make_window_plan(std::size_t height, std::size_t width, std::size_t window,
                            std::size_t shift);

/// (H*W) x C tokens -> (windows*tokens) x C.
Tensor partition_windows(const Tensor& tokens, const WindowPlan& plan);
/// Inverse of partition_windows; padding slots are dropped.
Tensor merge_windows(const Tensor& windowed, const WindowPlan& plan);

AttentionLayout attention_layout(const WindowPlan& plan, std::size_t heads, double scale);

/// U_Q, U_K, U_V (P x C, heads stacked along P) and U_O (C x P).
struct ProjectionSet {
  LinearParams query, key, value, output;

  static ProjectionSet create(std::size_t channels, std::size_t projection, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Learnable (2w-1)^2 x heads table, looked up by intra-window offset.
struct PositionBiasTable {
  Tensor table;
  std::size_t window = 0;

  static PositionBiasTable create(std::size_t window, std::size_t heads, Rng& rng);
  std::size_t heads() const { return table.dim(1); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Windowed multi-head self-attention over already partitioned tokens:
/// per head A = softmax(QK^T s + B), Z* = A V; heads concatenated then
/// output-projected.
Tensor attend(const Tensor& windowed, const ProjectionSet& proj, const PositionBiasTable& bias,
              const WindowPlan& plan, ScaleMode mode = ScaleMode::head_dim);

struct MlpParams {
  LinearParams fc1, fc2;

  static MlpParams create(std::size_t channels, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& prefix, ParamList& out) const;
};

inline constexpr std::size_t kMlpRatio = 4;

/// One pre-norm attention layer: x + W-MSA(LN(x)), then x + MLP(LN(x)).
struct AttentionLayerParams {
  LayerNormParams norm1;
  ProjectionSet proj;
  PositionBiasTable bias;
  LayerNormParams norm2;
  MlpParams mlp;

  static AttentionLayerParams create(std::size_t channels, const WindowConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  /// Zeroes the attention output projection and the second MLP layer.
  void zero_residual_branches();
};

Tensor attention_layer(const Tensor& tokens, std::size_t height, std::size_t width,
                       const AttentionLayerParams& params, std::size_t window, std::size_t shift,
                       ScaleMode mode);

/// Two attention layers, the second with a cyclic shift of w/2.
struct TransformerBlockParams {
  std::array<AttentionLayerParams, 2> layers;
  WindowConfig config;

  static TransformerBlockParams create(std::size_t channels, const WindowConfig& cfg, Rng& rng);
  std::size_t channels() const { return layers[0].norm1.gain.numel(); }
  void collect(const std::string& prefix, ParamList& out) const;
  void zero_residual_branches();
};

Tensor transformer_block_tokens(const Tensor& tokens, std::size_t height, std::size_t width,
                                const TransformerBlockParams& params,
                                ScaleMode mode = ScaleMode::head_dim);

/// C x H x W -> C x H x W.
Tensor transformer_block(const Tensor& feature, const TransformerBlockParams& params,
                         ScaleMode mode = ScaleMode::head_dim);

}  // namespace vde
