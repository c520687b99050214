#pragma once

#include <vector>

#include "vde/config.hpp"
#include "vde/params.hpp"

namespace vde {

/// Adam with decoupled weight decay on `decay` parameters. Tensors without
/// requires_grad, or that the last backward pass did not reach (empty
/// gradient), are left untouched, moments included. Updated values are
/// rounded to storage precision and gradients are released after each step.
class AdamW {
 public:
  AdamW(ParamList params, const OptimizerConfig& cfg);

  /// Throws NumericError on a non-finite gradient before changing anything.
  void step(double lr);
  void clear_grads();
  std::size_t steps() const { return steps_; }

 private:
  ParamList params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::size_t> t_;
  std::size_t steps_ = 0;
};

/// Linear interpolation from lr_start (first step) to lr_end (last step).
double linear_lr(const OptimizerConfig& cfg, std::size_t step, std::size_t total);

}  // namespace vde
