#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vde/tensor.hpp"

namespace vde {

using CameraId = std::string;

/// H x W depth grid in meters with a validity mask.
struct DepthMap {
  std::size_t height = 0, width = 0;
  std::vector<double> depths;
  std::vector<std::uint8_t> valid;
  CameraId camera;

  static DepthMap dense(std::size_t height, std::size_t width, std::vector<double> depths,
                        CameraId camera = {});
  std::size_t size() const { return height * width; }
  std::size_t valid_count() const;
  std::vector<std::size_t> valid_indices() const;
};

/// Unitless zero-mean, unit-std map over the valid pixels of a DepthMap.
struct NormalizedDepthMap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;
  CameraId camera;
};

struct NormalizationStats {
  double mu = 0.0;
  double sigma = 1.0;
};

inline constexpr double kSigmaMin = 1e-6;

struct Normalized {
  NormalizedDepthMap map;
  NormalizationStats stats;
};

/// (D - mu) / sigma over valid pixels, population sigma.
Normalized normalize(const DepthMap& depth);
DepthMap denormalize(const NormalizedDepthMap& map, const NormalizationStats& stats);

enum class CrdeLossMode { linear, log };

struct LossConfig {
  double alpha = 10.0;
  double lambda = 0.85;
  CrdeLossMode crde_mode = CrdeLossMode::linear;
};

/// Offset and floor used by the log-mode relative loss.
inline constexpr double kLogModeMargin = 0.1;
inline constexpr double kLogModeFloor = 1e-3;

/// alpha * sqrt(mean(e^2) - lambda * mean(e)^2) for residuals e.
Tensor silog_from_residuals(const Tensor& residuals, const LossConfig& cfg);

/// Scale-invariant log loss of a prediction tensor (H*W elements, row-major)
/// against a metric map, over the map's valid pixels.
Tensor silog_loss(const Tensor& prediction, const DepthMap& target, const LossConfig& cfg = {});
/// Map-to-map form over the intersection of both masks.
double silog_loss(const DepthMap& prediction, const DepthMap& target, const LossConfig& cfg = {});

/// Loss between a predicted normalized map (H*W elements) and a normalized
/// target, in linear-residual or shifted-log form.
Tensor crde_loss(const Tensor& prediction, const NormalizedDepthMap& target,
                 const LossConfig& cfg = {});

}  // namespace vde
