#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vde/depth.hpp"

namespace vde {

enum class RmseForm { root_mean, literal };
enum class TauMode { paper, classical };

struct BasicMetrics {
  double rmse = 0, rel = 0, log10 = 0, delta1 = 0, delta2 = 0, delta3 = 0;
};

/// Over pixels valid in both maps; predictions must be positive there.
BasicMetrics basic_metrics(const DepthMap& prediction, const DepthMap& target,
                           RmseForm form = RmseForm::root_mean);

struct CalibrationParams {
  double m = 1.0;
  double b = 0.0;
};

/// Least-squares m, b minimizing sum (m r + b - d)^2 over the target's valid
/// pixels. `relative` has one value per pixel.
CalibrationParams calibrate_scale_shift(std::span<const double> relative, const DepthMap& target);

inline constexpr double kCalibratedFloor = 1e-6;

struct RelativeMetrics {
  double delta1 = 0;
  double rmse = 0;
  CalibrationParams calibration;
};

RelativeMetrics relative_metrics(std::span<const double> relative, const DepthMap& target,
                                 RmseForm form = RmseForm::root_mean);

struct PairCounts {
  std::uint64_t pairs = 0, concordant = 0, discordant = 0;
};

/// O(n log n) concordant/discordant counts; pairs tied in either input count
/// as neither.
PairCounts count_pairs(std::span<const double> a, std::span<const double> b);
PairCounts count_pairs_brute(std::span<const double> a, std::span<const double> b);
double tau_from_counts(const PairCounts& counts, TauMode mode);

double kendall_tau(std::span<const double> a, std::span<const double> b, TauMode mode = TauMode::paper);
double kendall_tau_brute(std::span<const double> a, std::span<const double> b,
                         TauMode mode = TauMode::paper);

inline constexpr std::size_t kTauSampleLimit = 50000;

struct TauResult {
  double tau = 0;
  std::size_t samples = 0;
};

/// Tau over the target's valid pixels, uniformly subsampled (seeded) to at
/// most `limit` pixels.
TauResult kendall_tau_map(std::span<const double> prediction, const DepthMap& target, TauMode mode,
                          std::size_t limit = kTauSampleLimit, std::uint64_t seed = 0);

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"rmse",   "rel",    "log10",           "delta1",
                                              "delta2", "delta3", "relative_delta1", "relative_rmse",
                                              "kendall_tau"};
  return names;
}

/// Per-dataset means of per-image metrics.
struct MetricsReport {
  std::string dataset;
  std::map<std::string, double> values;
  std::size_t images = 0;
  std::size_t tau_samples = 0;  // largest per-image sample used for tau
};

struct MetricsOptions {
  TauMode tau_mode = TauMode::paper;
  RmseForm rmse_form = RmseForm::root_mean;
  std::size_t tau_limit = kTauSampleLimit;
  std::uint64_t seed = 0;
};

class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(std::string dataset, MetricsOptions options = {});
  /// `metric` is a positive map; `relative` is any per-pixel relative map
  /// (e.g. the normalized prediction) used for the calibrated metrics.
  void add(const DepthMap& metric, std::span<const double> relative, const DepthMap& target);
  MetricsReport finish() const;

 private:
  std::string dataset_;
  MetricsOptions options_;
  std::map<std::string, double> sums_;
  std::size_t images_ = 0;
  std::size_t tau_samples_ = 0;
};

struct AggregateReport {
  std::map<std::string, double> values;
  /// Metrics that fell back to the arithmetic mean because a value was <= 0.
  std::vector<std::string> arithmetic_fallback;
};

double geometric_mean(std::span<const double> values, bool* fell_back = nullptr);
AggregateReport aggregate(const std::vector<MetricsReport>& reports);

/// Rows "dataset,metric,value"; aggregates use dataset "geomean".
std::string metrics_csv(const std::vector<MetricsReport>& reports, const AggregateReport& aggregate);
std::string metrics_json(const std::vector<MetricsReport>& reports, const AggregateReport& aggregate);

}  // namespace vde
