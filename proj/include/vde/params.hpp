#pragma once

#include <string>
#include <vector>

#include "vde/rng.hpp"
#include "vde/tensor.hpp"

namespace vde {

/// A named view of one learnable tensor. `decay` marks weights that receive
/// decoupled weight decay (matrices); biases, norms, coefficients and anchors
/// do not.
struct ParamRef {
  std::string name;
  Tensor tensor;
  bool decay = false;
};

using ParamList = std::vector<ParamRef>;

std::size_t count_elements(const ParamList& params);

/// Parameters are held at 32-bit precision: every initializer and optimizer
/// update rounds through float, so checkpoints store them losslessly while
/// all arithmetic stays 64-bit.
void round_to_storage(std::span<double> values);

Tensor init_normal(Rng& rng, Shape shape, double stddev);
Tensor init_constant(Shape shape, double value);

struct LinearParams {
  Tensor weight;  // out x in
  Tensor bias;    // out, may be undefined

  static LinearParams create(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
  void zero();
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams create(std::size_t channels);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace vde
