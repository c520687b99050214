#pragma once

#include <functional>
#include <vector>

#include "vde/tensor.hpp"

namespace vde {

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(p+h) - f(p-h)) / 2h, coordinate by coordinate.
///
/// The error per coordinate is |fd - ad| / max(1, |fd|, |ad|); the maximum
/// over all coordinates of all params is returned. `max_coordinates` > 0
/// checks an evenly strided subset of each parameter.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           double h = 1e-5, std::size_t max_coordinates = 0);

}  // namespace vde
