#include "vde/params.hpp"

#include <algorithm>

namespace vde {

std::size_t count_elements(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void round_to_storage(std::span<double> values) {
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor init_normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  round_to_storage(v);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor init_constant(Shape shape, double value) {
  auto t = Tensor::full(std::move(shape), value, true);
  round_to_storage(t.mutable_values());
  return t;
}

LinearParams LinearParams::create(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  LinearParams p;
  p.weight = init_normal(rng, {out, in}, 0.02);
  if (with_bias) p.bias = init_constant({out}, 0.0);
  return p;
}

void LinearParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, true});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, false});
}

void LinearParams::zero() {
  auto w = weight.mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  if (bias.defined()) {
    auto b = bias.mutable_values();
    std::fill(b.begin(), b.end(), 0.0);
  }
}

LayerNormParams LayerNormParams::create(std::size_t channels) {
  return {init_constant({channels}, 1.0), init_constant({channels}, 0.0)};
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain, false});
  out.push_back({prefix + ".bias", bias, false});
}

}  // namespace vde
