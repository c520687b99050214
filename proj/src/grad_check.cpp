#include "vde/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace vde {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           double h, std::size_t max_coordinates) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
  loss.backward();

  GradCheckResult result;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (!p.grad().empty()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    const std::size_t n = p.numel();
    const std::size_t stride =
        (max_coordinates == 0 || n <= max_coordinates) ? 1 : (n + max_coordinates - 1) / max_coordinates;
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = values[i];
      values[i] = original + h;
      const double plus = evaluate(f);
      values[i] = original - h;
      const double minus = evaluate(f);
      values[i] = original;
      const double fd = (plus - minus) / (2.0 * h);
      const double ad = analytic[i];
      const double err = std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
      result.max_error = std::max(result.max_error, err);
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace vde
