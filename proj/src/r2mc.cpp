#include "vde/r2mc.hpp"

namespace vde {

ConversionLayerParams ConversionLayerParams::create(std::size_t channels, const WindowConfig& cfg,
                                                    bool with_anchor, bool with_value, Rng& rng) {
  if (channels % cfg.heads != 0) {
    throw ShapeError("conversion layer: " + std::to_string(channels) +
                     " channels not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  ConversionLayerParams p;
  p.norm = LayerNormParams::create(channels);
  p.query = LinearParams::create(channels, channels, rng);
  p.key = LinearParams::create(channels, channels, rng);
  if (with_value) p.value = LinearParams::create(channels, channels, rng);
  if (with_anchor) p.anchor = Tensor::full({cfg.window * cfg.window, channels}, kAnchorInit, true);
  p.output = LinearParams::create(channels, channels, rng);
  p.bias = PositionBiasTable::create(cfg.window, cfg.heads, rng);
  p.norm_mlp = LayerNormParams::create(channels);
  p.mlp = MlpParams::create(channels, kMlpRatio * channels, rng);
  return p;
}

void ConversionLayerParams::collect(const std::string& prefix, ParamList& out) const {
  norm.collect(prefix + ".norm", out);
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  if (value.weight.defined()) value.collect(prefix + ".value", out);
  if (anchor.defined()) out.push_back({prefix + ".anchor", anchor, false});
  output.collect(prefix + ".output", out);
  bias.collect(prefix + ".bias", out);
  norm_mlp.collect(prefix + ".norm_mlp", out);
  mlp.collect(prefix + ".mlp", out);
}

void ConversionLayerParams::zero_residual_branches() {
  output.zero();
  mlp.fc2.zero();
}

ConversionResult conversion_layer_tokens(const Tensor& tokens, std::size_t height,
                                         std::size_t width, const ConversionLayerParams& params,
                                         const ConversionValue& value, std::size_t shift,
                                         ScaleMode mode) {
  if (tokens.rank() != 2 || tokens.dim(0) != height * width) {
    throw ShapeError("conversion_layer: " + shape_to_string(tokens.shape()) + " for a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  const auto plan = make_window_plan(height, width, params.bias.window, shift);
  auto x = partition_windows(params.norm(tokens), plan);
  auto q = params.query(x);
  auto k = params.key(x);
  const std::size_t p = q.dim(1);
  Tensor v;
  switch (value.kind) {
    case ConversionValue::Kind::anchor: {
      const std::size_t rows = plan.configured_window * plan.configured_window;
      if (value.matrix.rank() != 2 || value.matrix.dim(0) != rows || value.matrix.dim(1) != p) {
        throw ShapeError("conversion_layer: anchor " + shape_to_string(value.matrix.shape()) +
                         ", expected [" + std::to_string(rows) + "x" + std::to_string(p) + "]");
      }
      v = index_rows(value.matrix, plan.local_rows);
      break;
    }
    case ConversionValue::Kind::carried:
      if (value.matrix.rank() != 2 || value.matrix.dim(0) != height * width ||
          value.matrix.dim(1) != p) {
        throw ShapeError("conversion_layer: carried values " + shape_to_string(value.matrix.shape()) +
                         " for " + std::to_string(height * width) + " tokens of width " +
                         std::to_string(p));
      }
      v = partition_windows(value.matrix, plan);
      break;
    case ConversionValue::Kind::projected:
      if (!params.value.weight.defined()) {
        throw ShapeError("conversion_layer: no value projection in these parameters");
      }
      v = params.value(x);
      break;
  }
  const std::size_t heads = params.bias.heads();
  const double scale = attention_scale(mode, p / heads, plan.tokens);
  auto attended = window_attention(q, k, v, params.bias.table, attention_layout(plan, heads, scale));
  auto y = add(tokens, merge_windows(params.output(attended), plan));
  y = add(y, params.mlp(params.norm_mlp(y)));
  return {y, merge_windows(attended, plan)};
}

ConversionResult conversion_layer(const Tensor& feature, const ConversionLayerParams& params,
                                  const ConversionValue& value, std::size_t shift, ScaleMode mode) {
  if (feature.rank() != 3) {
    throw ShapeError("conversion_layer: expected C x H x W, got " + shape_to_string(feature.shape()));
  }
  return conversion_layer_tokens(to_tokens(feature), feature.dim(1), feature.dim(2), params, value,
                                 shift, mode);
}

R2mcParams R2mcParams::create(const R2mcConfig& cfg, Rng& rng) {
  R2mcParams p;
  p.config = cfg;
  if (cfg.width != cfg.input_channels) p.input = LinearParams::create(cfg.input_channels, cfg.width, rng);
  p.conversion[0] = ConversionLayerParams::create(cfg.width, cfg.window, !cfg.no_anchor, cfg.no_anchor, rng);
  p.conversion[1] = ConversionLayerParams::create(cfg.width, cfg.window, false, cfg.no_anchor, rng);
  p.block = TransformerBlockParams::create(cfg.width, cfg.window, rng);
  p.head = LinearParams::create(cfg.width, 1, rng);
  return p;
}

void R2mcParams::collect(const std::string& prefix, ParamList& out) const {
  if (input.weight.defined()) input.collect(prefix + ".input", out);
  conversion[0].collect(prefix + ".conv0", out);
  conversion[1].collect(prefix + ".conv1", out);
  block.collect(prefix + ".block", out);
  head.collect(prefix + ".head", out);
}

std::size_t R2mcParams::count() const {
  ParamList list;
  collect("", list);
  return count_elements(list);
}

Tensor metric_activation(const Tensor& x) { return exp(clamp(x, -kMetricLogClamp, kMetricLogClamp)); }

R2mcOutput r2mc_forward(const Tensor& relative, const R2mcParams& params, ScaleMode mode) {
  if (relative.rank() != 3 || relative.dim(0) != params.config.input_channels) {
    throw ShapeError("r2mc: expected " + std::to_string(params.config.input_channels) +
                     " x h x w, got " + shape_to_string(relative.shape()));
  }
  const std::size_t h = relative.dim(1), w = relative.dim(2);
  auto x = to_tokens(relative);
  if (params.input.weight.defined()) x = params.input(x);
  const std::size_t shift = params.config.window.window / 2;
  ConversionResult first, second;
  if (params.config.no_anchor) {
    first = conversion_layer_tokens(x, h, w, params.conversion[0], ConversionValue::projected(), 0, mode);
    second = conversion_layer_tokens(first.tokens, h, w, params.conversion[1],
                                     ConversionValue::projected(), shift, mode);
  } else {
    first = conversion_layer_tokens(x, h, w, params.conversion[0],
                                    ConversionValue::anchor(params.conversion[0].anchor), 0, mode);
    second = conversion_layer_tokens(first.tokens, h, w, params.conversion[1],
                                     ConversionValue::carried(first.attended), shift, mode);
  }
  auto feature = transformer_block_tokens(second.tokens, h, w, params.block, mode);
  auto depth = metric_activation(params.head(feature));
  return {from_tokens(depth, h, w), from_tokens(feature, h, w)};
}

}  // namespace vde
