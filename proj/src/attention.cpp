#include "vde/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vde {

double attention_scale(ScaleMode mode, std::size_t head_dim, std::size_t tokens) {
  const std::size_t d = mode == ScaleMode::head_dim ? head_dim : tokens;
  if (d == 0) throw ShapeError("attention_scale: zero normalizer");
  return 1.0 / std::sqrt(static_cast<double>(d));
}

namespace {

// Region id along one axis of the rolled, padded frame (Swin's three slices).
std::size_t shift_region(std::size_t p, std::size_t extent, std::size_t window, std::size_t shift) {
  if (p < extent - window) return 0;
  if (p < extent - shift) return 1;
  return 2;
}

}  // namespace

WindowPlan make_window_plan(std::size_t height, std::size_t width, std::size_t window,
                            std::size_t shift) {
  if (height == 0 || width == 0) throw ShapeError("make_window_plan: empty map");
  if (window == 0) throw ShapeError("make_window_plan: zero window");
  if (shift >= window) {
    throw ShapeError("make_window_plan: shift " + std::to_string(shift) + " >= window " +
                     std::to_string(window));
  }
  WindowPlan plan;
  plan.height = height;
  plan.width = width;
  plan.configured_window = window;
  plan.window = window;
  plan.shift = shift;
  if (std::min(height, width) <= window) {
    plan.window = std::min(height, width);
    plan.shift = 0;
  }
  const std::size_t w = plan.window;
  const std::size_t pad_h = (w - height % w) % w;
  const std::size_t pad_w = (w - width % w) % w;
  plan.pad_top = pad_h / 2;
  plan.pad_left = pad_w / 2;
  plan.padded_height = height + pad_h;
  plan.padded_width = width + pad_w;
  const std::size_t nwy = plan.padded_height / w, nwx = plan.padded_width / w;
  plan.windows = nwy * nwx;
  plan.tokens = w * w;

  const std::size_t hp = plan.padded_height, wp = plan.padded_width, s = plan.shift;
  const std::size_t slots = plan.windows * plan.tokens;
  plan.partition_rows.assign(slots, kZeroIndex);
  plan.local_rows.assign(slots, kZeroIndex);
  plan.merge_rows.assign(height * width, kZeroIndex);
  std::vector<std::size_t> region(slots, 0);
  bool any_masked = false;

  for (std::size_t wy = 0; wy < nwy; ++wy) {
    for (std::size_t wx = 0; wx < nwx; ++wx) {
      for (std::size_t ly = 0; ly < w; ++ly) {
        for (std::size_t lx = 0; lx < w; ++lx) {
          const std::size_t slot = ((wy * nwx + wx) * w + ly) * w + lx;
          const std::size_t py = wy * w + ly, px = wx * w + lx;
          // rolled frame position (py, px) reads padded position shifted by +s
          const std::size_t sy = (py + s) % hp, sx = (px + s) % wp;
          if (s > 0) region[slot] = shift_region(py, hp, w, s) * 3 + shift_region(px, wp, w, s);
          if (sy >= plan.pad_top && sy < plan.pad_top + height && sx >= plan.pad_left &&
              sx < plan.pad_left + width) {
            const std::size_t src = (sy - plan.pad_top) * width + (sx - plan.pad_left);
            plan.partition_rows[slot] = src;
            plan.merge_rows[src] = slot;
            plan.local_rows[slot] = ly * window + lx;
          } else {
            any_masked = true;
          }
        }
      }
    }
  }

  const std::size_t n = plan.tokens;
  const std::size_t span = 2 * window - 1;
  plan.bias_index.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t dy = (i / w) + window - 1 - (j / w);
      const std::size_t dx = (i % w) + window - 1 - (j % w);
      plan.bias_index[i * n + j] = dy * span + dx;
    }
  }

  if (any_masked || s > 0) {
    const double neg_inf = -std::numeric_limits<double>::infinity();
    plan.mask.assign(plan.windows * n * n, 0.0);
    bool used = false;
    for (std::size_t win = 0; win < plan.windows; ++win) {
      for (std::size_t i = 0; i < n; ++i) {
        // padded query rows are discarded on merge; leave them unmasked
        if (plan.partition_rows[win * n + i] == kZeroIndex) continue;
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t si = win * n + i, sj = win * n + j;
          if (plan.partition_rows[sj] == kZeroIndex || region[si] != region[sj]) {
            plan.mask[si * n + j] = neg_inf;
            used = true;
          }
        }
      }
    }
    if (!used) plan.mask.clear();
  }
  return plan;
}

Tensor partition_windows(const Tensor& tokens, const WindowPlan& plan) {
  if (tokens.rank() != 2 || tokens.dim(0) != plan.height * plan.width) {
    throw ShapeError("partition_windows: " + shape_to_string(tokens.shape()) + " for a " +
                     std::to_string(plan.height) + "x" + std::to_string(plan.width) + " plan");
  }
  return index_rows(tokens, plan.partition_rows);
}

Tensor merge_windows(const Tensor& windowed, const WindowPlan& plan) {
  if (windowed.rank() != 2 || windowed.dim(0) != plan.windows * plan.tokens) {
    throw ShapeError("merge_windows: " + shape_to_string(windowed.shape()) + " for " +
                     std::to_string(plan.windows * plan.tokens) + " slots");
  }
  return index_rows(windowed, plan.merge_rows);
}

AttentionLayout attention_layout(const WindowPlan& plan, std::size_t heads, double scale) {
  return AttentionLayout{plan.windows, plan.tokens, heads, scale, plan.bias_index, plan.mask};
}

ProjectionSet ProjectionSet::create(std::size_t channels, std::size_t projection, Rng& rng) {
  return {LinearParams::create(channels, projection, rng),
          LinearParams::create(channels, projection, rng),
          LinearParams::create(channels, projection, rng),
          LinearParams::create(projection, channels, rng)};
}

void ProjectionSet::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

PositionBiasTable PositionBiasTable::create(std::size_t window, std::size_t heads, Rng& rng) {
  const std::size_t span = 2 * window - 1;
  return {init_normal(rng, {span * span, heads}, 0.02), window};
}

void PositionBiasTable::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".table", table, false});
}

Tensor attend(const Tensor& windowed, const ProjectionSet& proj, const PositionBiasTable& bias,
              const WindowPlan& plan, ScaleMode mode) {
  const std::size_t heads = bias.heads();
  const std::size_t projection = proj.query.out_features();
  if (projection % heads != 0) {
    throw ShapeError("attend: projection width " + std::to_string(projection) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  if (bias.window != plan.configured_window) {
    throw ShapeError("attend: bias table window " + std::to_string(bias.window) +
                     " vs plan window " + std::to_string(plan.configured_window));
  }
  const double scale = attention_scale(mode, projection / heads, plan.tokens);
  auto q = proj.query(windowed);
  auto k = proj.key(windowed);
  auto v = proj.value(windowed);
  auto z = window_attention(q, k, v, bias.table, attention_layout(plan, heads, scale));
  return proj.output(z);
}

MlpParams MlpParams::create(std::size_t channels, std::size_t hidden, Rng& rng) {
  return {LinearParams::create(channels, hidden, rng), LinearParams::create(hidden, channels, rng)};
}

void MlpParams::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

AttentionLayerParams AttentionLayerParams::create(std::size_t channels, const WindowConfig& cfg,
                                                  Rng& rng) {
  AttentionLayerParams p;
  p.norm1 = LayerNormParams::create(channels);
  p.proj = ProjectionSet::create(channels, channels, rng);
  p.bias = PositionBiasTable::create(cfg.window, cfg.heads, rng);
  p.norm2 = LayerNormParams::create(channels);
  p.mlp = MlpParams::create(channels, kMlpRatio * channels, rng);
  return p;
}

void AttentionLayerParams::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  proj.collect(prefix + ".attn", out);
  bias.collect(prefix + ".bias", out);
  norm2.collect(prefix + ".norm2", out);
  mlp.collect(prefix + ".mlp", out);
}

void AttentionLayerParams::zero_residual_branches() {
  proj.output.zero();
  mlp.fc2.zero();
}

Tensor attention_layer(const Tensor& tokens, std::size_t height, std::size_t width,
                       const AttentionLayerParams& params, std::size_t window, std::size_t shift,
                       ScaleMode mode) {
  const auto plan = make_window_plan(height, width, window, shift);
  auto windowed = partition_windows(params.norm1(tokens), plan);
  auto x = add(tokens, merge_windows(attend(windowed, params.proj, params.bias, plan, mode), plan));
  return add(x, params.mlp(params.norm2(x)));
}

TransformerBlockParams TransformerBlockParams::create(std::size_t channels, const WindowConfig& cfg,
                                                      Rng& rng) {
  if (channels % cfg.heads != 0) {
    throw ShapeError("transformer block: " + std::to_string(channels) +
                     " channels not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  TransformerBlockParams p;
  p.config = cfg;
  p.layers[0] = AttentionLayerParams::create(channels, cfg, rng);
  p.layers[1] = AttentionLayerParams::create(channels, cfg, rng);
  return p;
}

void TransformerBlockParams::collect(const std::string& prefix, ParamList& out) const {
  layers[0].collect(prefix + ".layer0", out);
  layers[1].collect(prefix + ".layer1", out);
}

void TransformerBlockParams::zero_residual_branches() {
  for (auto& l : layers) l.zero_residual_branches();
}

Tensor transformer_block_tokens(const Tensor& tokens, std::size_t height, std::size_t width,
                                const TransformerBlockParams& params, ScaleMode mode) {
  const std::size_t w = params.config.window;
  auto x = attention_layer(tokens, height, width, params.layers[0], w, 0, mode);
  return attention_layer(x, height, width, params.layers[1], w, w / 2, mode);
}

Tensor transformer_block(const Tensor& feature, const TransformerBlockParams& params,
                         ScaleMode mode) {
  if (feature.rank() != 3) {
    throw ShapeError("transformer_block: expected C x H x W, got " + shape_to_string(feature.shape()));
  }
  const std::size_t h = feature.dim(1), w = feature.dim(2);
  return from_tokens(transformer_block_tokens(to_tokens(feature), h, w, params, mode), h, w);
}

}  // namespace vde
