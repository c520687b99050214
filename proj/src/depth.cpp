#include "vde/depth.hpp"

#include <algorithm>
#include <cmath>

namespace vde {

DepthMap DepthMap::dense(std::size_t height, std::size_t width, std::vector<double> depths,
                         CameraId camera) {
  if (depths.size() != height * width) {
    throw ShapeError("DepthMap: " + std::to_string(depths.size()) + " values for " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  DepthMap d{height, width, std::move(depths), {}, std::move(camera)};
  d.valid.resize(d.depths.size());
  for (std::size_t i = 0; i < d.depths.size(); ++i) {
    d.valid[i] = std::isfinite(d.depths[i]) && d.depths[i] > 0.0;
  }
  return d;
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

std::vector<std::size_t> DepthMap::valid_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) out.push_back(i);
  }
  return out;
}

Normalized normalize(const DepthMap& depth) {
  std::size_t n = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth.valid[i]) {
      total += depth.depths[i];
      ++n;
    }
  }
  if (n < 2) throw DegenerateInputError("normalize: " + std::to_string(n) + " valid pixels");
  const double mu = total / static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth.valid[i]) var += (depth.depths[i] - mu) * (depth.depths[i] - mu);
  }
  const double sigma = std::sqrt(var / static_cast<double>(n));
  if (!(sigma >= kSigmaMin)) {
    throw DegenerateInputError("normalize: depth spread " + std::to_string(sigma) + " m below " +
                               std::to_string(kSigmaMin));
  }
  Normalized out{{depth.height, depth.width, std::vector<double>(depth.size(), 0.0), depth.valid,
                  depth.camera},
                 {mu, sigma}};
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth.valid[i]) out.map.values[i] = (depth.depths[i] - mu) / sigma;
  }
  return out;
}

DepthMap denormalize(const NormalizedDepthMap& map, const NormalizationStats& stats) {
  DepthMap d{map.height, map.width, std::vector<double>(map.values.size(), 0.0), map.valid, map.camera};
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (map.valid[i]) d.depths[i] = stats.sigma * map.values[i] + stats.mu;
  }
  return d;
}

Tensor silog_from_residuals(const Tensor& residuals, const LossConfig& cfg) {
  if (residuals.numel() == 0) throw DegenerateInputError("loss: no valid pixels");
  auto m = mean(residuals);
  auto inner = sub(mean(square(residuals)), affine(square(m), cfg.lambda));
  return affine(sqrt_clamped(inner), cfg.alpha);
}

namespace {

void require_size(const Tensor& prediction, std::size_t n, const char* what) {
  if (prediction.numel() != n) {
    throw ShapeError(std::string(what) + ": prediction " + shape_to_string(prediction.shape()) +
                     " vs " + std::to_string(n) + " target pixels");
  }
}

}  // namespace

Tensor silog_loss(const Tensor& prediction, const DepthMap& target, const LossConfig& cfg) {
  require_size(prediction, target.size(), "silog_loss");
  const auto idx = target.valid_indices();
  if (idx.empty()) throw DegenerateInputError("silog_loss: empty valid mask");
  std::vector<double> log_target(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) log_target[i] = std::log(target.depths[idx[i]]);
  auto picked = gather(prediction, idx, {idx.size()});
  auto e = sub(log(picked), Tensor::from({idx.size()}, std::move(log_target)));
  return silog_from_residuals(e, cfg);
}

double silog_loss(const DepthMap& prediction, const DepthMap& target, const LossConfig& cfg) {
  if (prediction.size() != target.size()) {
    throw ShapeError("silog_loss: map sizes " + std::to_string(prediction.size()) + " vs " +
                     std::to_string(target.size()));
  }
  std::vector<double> e;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!prediction.valid[i] || !target.valid[i]) continue;
    if (!(prediction.depths[i] > 0.0)) {
      throw NumericError("silog_loss: non-positive prediction at pixel " + std::to_string(i));
    }
    e.push_back(std::log(prediction.depths[i]) - std::log(target.depths[i]));
  }
  if (e.empty()) throw DegenerateInputError("silog_loss: empty valid mask");
  NoGradGuard no_grad;
  const std::size_t n = e.size();
  return silog_from_residuals(Tensor::from({n}, std::move(e)), cfg).item();
}

Tensor crde_loss(const Tensor& prediction, const NormalizedDepthMap& target, const LossConfig& cfg) {
  require_size(prediction, target.values.size(), "crde_loss");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < target.valid.size(); ++i) {
    if (target.valid[i]) idx.push_back(i);
  }
  if (idx.empty()) throw DegenerateInputError("crde_loss: empty valid mask");
  std::vector<double> t(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) t[i] = target.values[idx[i]];
  auto picked = gather(prediction, idx, {idx.size()});
  if (cfg.crde_mode == CrdeLossMode::linear) {
    return silog_from_residuals(sub(picked, Tensor::from({idx.size()}, std::move(t))), cfg);
  }
  const double offset = 1.0 + std::max(0.0, -*std::min_element(t.begin(), t.end())) + kLogModeMargin;
  for (auto& v : t) v = std::log(v + offset);
  auto shifted = clamp(affine(picked, 1.0, offset), kLogModeFloor, std::numeric_limits<double>::infinity());
  return silog_from_residuals(sub(log(shifted), Tensor::from({idx.size()}, std::move(t))), cfg);
}

}  // namespace vde
