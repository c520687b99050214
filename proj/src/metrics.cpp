#include "vde/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "vde/rng.hpp"

namespace vde {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": sizes " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

double finish_rmse(double sse, std::size_t n, RmseForm form) {
  return form == RmseForm::root_mean ? std::sqrt(sse / static_cast<double>(n))
                                     : std::sqrt(sse) / static_cast<double>(n);
}

}  // namespace

BasicMetrics basic_metrics(const DepthMap& prediction, const DepthMap& target, RmseForm form) {
  require_same_size(prediction.size(), target.size(), "basic_metrics");
  BasicMetrics m;
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!prediction.valid[i] || !target.valid[i]) continue;
    const double p = prediction.depths[i], d = target.depths[i];
    if (!(p > 0.0)) throw NumericError("basic_metrics: non-positive prediction at pixel " + std::to_string(i));
    sse += (p - d) * (p - d);
    m.rel += std::abs(p - d) / d;
    m.log10 += std::abs(std::log10(p) - std::log10(d));
    const double ratio = std::max(p / d, d / p);
    m.delta1 += ratio < 1.25;
    m.delta2 += ratio < 1.25 * 1.25;
    m.delta3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw DegenerateInputError("basic_metrics: empty valid mask");
  const double count = static_cast<double>(n);
  m.rmse = finish_rmse(sse, n, form);
  m.rel /= count;
  m.log10 /= count;
  m.delta1 /= count;
  m.delta2 /= count;
  m.delta3 /= count;
  return m;
}

CalibrationParams calibrate_scale_shift(std::span<const double> relative, const DepthMap& target) {
  require_same_size(relative.size(), target.size(), "calibrate_scale_shift");
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!target.valid[i]) continue;
    sx += relative[i];
    sy += target.depths[i];
    ++n;
  }
  if (n < 2) throw DegenerateInputError("calibrate_scale_shift: " + std::to_string(n) + " valid pixels");
  const double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!target.valid[i]) continue;
    sxx += (relative[i] - mx) * (relative[i] - mx);
    sxy += (relative[i] - mx) * (target.depths[i] - my);
  }
  if (!(sxx > 0.0)) throw DegenerateInputError("calibrate_scale_shift: constant relative map");
  const double m = sxy / sxx;
  return {m, my - m * mx};
}

RelativeMetrics relative_metrics(std::span<const double> relative, const DepthMap& target,
                                 RmseForm form) {
  const auto cal = calibrate_scale_shift(relative, target);
  DepthMap calibrated = target;
  for (std::size_t i = 0; i < target.size(); ++i) {
    calibrated.depths[i] = std::max(cal.m * relative[i] + cal.b, kCalibratedFloor);
    calibrated.valid[i] = 1;
  }
  const auto basic = basic_metrics(calibrated, target, form);
  return {basic.delta1, basic.rmse, cal};
}

namespace {

std::uint64_t tied_pairs(std::span<const double> sorted) {
  std::uint64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= sorted.size(); ++i) {
    if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Counts strict inversions while merge-sorting `v`.
std::uint64_t sort_inversions(std::vector<double>& v, std::vector<double>& scratch, std::size_t lo,
                              std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = sort_inversions(v, scratch, lo, mid) + sort_inversions(v, scratch, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += mid - i;
      scratch[k++] = v[j++];
    } else {
      scratch[k++] = v[i++];
    }
  }
  while (i < mid) scratch[k++] = v[i++];
  while (j < hi) scratch[k++] = v[j++];
  std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo), scratch.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace

PairCounts count_pairs(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "kendall_tau");
  const std::size_t n = a.size();
  if (n < 2) throw DegenerateInputError("kendall_tau: fewer than 2 values");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });
  std::vector<double> sa(n), sb(n);
  for (std::size_t i = 0; i < n; ++i) {
    sa[i] = a[order[i]];
    sb[i] = b[order[i]];
  }
  const std::uint64_t tie_a = tied_pairs(sa);
  std::uint64_t tie_ab = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && sa[i] == sa[i - 1] && sb[i] == sb[i - 1]) {
      ++run;
    } else {
      tie_ab += run * (run - 1) / 2;
      run = 1;
    }
  }
  std::vector<double> scratch(n);
  const std::uint64_t discordant = sort_inversions(sb, scratch, 0, n);
  const std::uint64_t tie_b = tied_pairs(sb);
  PairCounts c;
  c.pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  c.discordant = discordant;
  c.concordant = c.pairs - (tie_a + tie_b - tie_ab) - discordant;
  return c;
}

PairCounts count_pairs_brute(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "kendall_tau");
  if (a.size() < 2) throw DegenerateInputError("kendall_tau: fewer than 2 values");
  PairCounts c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      ++c.pairs;
      const double s = (a[i] - a[j]) * (b[i] - b[j]);
      if (s > 0) ++c.concordant;
      if (s < 0) ++c.discordant;
    }
  }
  return c;
}

double tau_from_counts(const PairCounts& c, TauMode mode) {
  const double pairs = static_cast<double>(c.pairs);
  if (mode == TauMode::paper) return static_cast<double>(c.concordant) / pairs;
  return (static_cast<double>(c.concordant) - static_cast<double>(c.discordant)) / pairs;
}

double kendall_tau(std::span<const double> a, std::span<const double> b, TauMode mode) {
  return tau_from_counts(count_pairs(a, b), mode);
}

double kendall_tau_brute(std::span<const double> a, std::span<const double> b, TauMode mode) {
  return tau_from_counts(count_pairs_brute(a, b), mode);
}

TauResult kendall_tau_map(std::span<const double> prediction, const DepthMap& target, TauMode mode,
                          std::size_t limit, std::uint64_t seed) {
  require_same_size(prediction.size(), target.size(), "kendall_tau_map");
  auto idx = target.valid_indices();
  if (idx.size() > limit) {
    Rng rng(seed);
    auto pick = rng.sample_indices(idx.size(), limit);
    std::sort(pick.begin(), pick.end());
    std::vector<std::size_t> sub(pick.size());
    for (std::size_t i = 0; i < pick.size(); ++i) sub[i] = idx[pick[i]];
    idx = std::move(sub);
  }
  std::vector<double> a(idx.size()), b(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    a[i] = prediction[idx[i]];
    b[i] = target.depths[idx[i]];
  }
  return {kendall_tau(a, b, mode), idx.size()};
}

MetricsAccumulator::MetricsAccumulator(std::string dataset, MetricsOptions options)
    : dataset_(std::move(dataset)), options_(options) {}

void MetricsAccumulator::add(const DepthMap& metric, std::span<const double> relative,
                             const DepthMap& target) {
  const auto basic = basic_metrics(metric, target, options_.rmse_form);
  const auto rel = relative_metrics(relative, target, options_.rmse_form);
  const auto tau = kendall_tau_map(metric.depths, target, options_.tau_mode, options_.tau_limit,
                                   options_.seed + images_);
  sums_["rmse"] += basic.rmse;
  sums_["rel"] += basic.rel;
  sums_["log10"] += basic.log10;
  sums_["delta1"] += basic.delta1;
  sums_["delta2"] += basic.delta2;
  sums_["delta3"] += basic.delta3;
  sums_["relative_delta1"] += rel.delta1;
  sums_["relative_rmse"] += rel.rmse;
  sums_["kendall_tau"] += tau.tau;
  tau_samples_ = std::max(tau_samples_, tau.samples);
  ++images_;
}

MetricsReport MetricsAccumulator::finish() const {
  if (images_ == 0) throw DegenerateInputError("metrics: no images for " + dataset_);
  MetricsReport r{dataset_, {}, images_, tau_samples_};
  for (const auto& name : metric_names()) r.values[name] = sums_.at(name) / static_cast<double>(images_);
  return r;
}

double geometric_mean(std::span<const double> values, bool* fell_back) {
  if (values.empty()) throw DegenerateInputError("geometric_mean: no values");
  const bool positive = std::all_of(values.begin(), values.end(), [](double v) { return v > 0.0; });
  if (fell_back) *fell_back = !positive;
  const double n = static_cast<double>(values.size());
  if (!positive) return std::accumulate(values.begin(), values.end(), 0.0) / n;
  double log_sum = 0.0;
  for (double v : values) log_sum += std::log(v);
  return std::exp(log_sum / n);
}

AggregateReport aggregate(const std::vector<MetricsReport>& reports) {
  AggregateReport out;
  if (reports.empty()) throw DegenerateInputError("aggregate: no reports");
  for (const auto& name : metric_names()) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(r.values.at(name));
    bool fell_back = false;
    out.values[name] = geometric_mean(v, &fell_back);
    if (fell_back) out.arithmetic_fallback.push_back(name);
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsReport>& reports, const AggregateReport& agg) {
  std::ostringstream os;
  os.precision(17);
  os << "dataset,metric,value\n";
  for (const auto& r : reports) {
    for (const auto& name : metric_names()) os << r.dataset << ',' << name << ',' << r.values.at(name) << '\n';
  }
  for (const auto& name : metric_names()) os << "geomean," << name << ',' << agg.values.at(name) << '\n';
  return os.str();
}

std::string metrics_json(const std::vector<MetricsReport>& reports, const AggregateReport& agg) {
  nlohmann::ordered_json j;
  for (const auto& r : reports) {
    auto& d = j["datasets"][r.dataset];
    for (const auto& name : metric_names()) d[name] = r.values.at(name);
    d["images"] = r.images;
    d["tau_samples"] = r.tau_samples;
  }
  for (const auto& name : metric_names()) j["geomean"][name] = agg.values.at(name);
  j["arithmetic_fallback"] = agg.arithmetic_fallback;
  return j.dump(2);
}

}  // namespace vde
