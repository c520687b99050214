#include "vde/optim.hpp"

#include <cmath>

#include "vde/errors.hpp"

namespace vde {

AdamW::AdamW(ParamList params, const OptimizerConfig& cfg)
    : params_(std::move(params)), cfg_(cfg), m_(params_.size()), v_(params_.size()), t_(params_.size(), 0) {}

void AdamW::step(double lr) {
  for (const auto& p : params_) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto grad = p.tensor.grad();
    if (!p.tensor.requires_grad() || grad.empty()) continue;
    auto values = p.tensor.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.empty()) m.assign(values.size(), 0.0), v.assign(values.size(), 0.0);
    const double t = static_cast<double>(++t_[i]);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * grad[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * grad[k] * grad[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.epsilon);
      values[k] -= lr * update + decay * values[k];
    }
    round_to_storage(values);
  }
  clear_grads();
  ++steps_;
}

void AdamW::clear_grads() {
  for (auto& p : params_) p.tensor.clear_grad();
}

double linear_lr(const OptimizerConfig& cfg, std::size_t step, std::size_t total) {
  if (total <= 1) return cfg.lr_start;
  const double f = static_cast<double>(step) / static_cast<double>(total - 1);
  return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * f;
}

}  // namespace vde
