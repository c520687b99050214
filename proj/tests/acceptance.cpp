// Acceptance checks; one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "dense_oracle.hpp"
#include "test_util.hpp"
#include "vde/checkpoint.hpp"
#include "vde/grad_check.hpp"
#include "vde/harness.hpp"
#include "vde/io.hpp"

using namespace vde;
using vde::testing::perturb;
using vde::testing::random_positive;
using vde::testing::random_tensor;
using vde::testing::tensors_of;
using vde::testing::weighted_sum;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

DepthMap random_depth(Rng& rng, std::size_t h, std::size_t w, double invalid_fraction = 0.2) {
  std::vector<double> d(h * w);
  for (auto& v : d) v = rng.uniform() < invalid_fraction ? 0.0 : rng.uniform(0.5, 20.0);
  d[0] = rng.uniform(0.5, 20.0);
  d[1] = d[0] + 1.0;
  return DepthMap::dense(h, w, std::move(d));
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder.widths = {8, 8, 8, 8};
  c.decoder.width = 8;
  c.decoder.bins = {1, 2};
  c.decoder.widths = {8, 8, 8};
  c.decoder.hidden = {8, 8, 8};
  c.r2mc_width = 8;
  return c;
}

template <typename P>
P perturbed(P params, Rng& rng, double scale, const char* prefix) {
  ParamList list;
  params.collect(prefix, list);
  perturb(list, rng, scale);
  return params;
}

// 1 -----------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, const GradCheckResult& r) {
    worst[name] = std::max(worst[name], r.max_error);
  };
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(10000 + seed);
    {
      auto gt = random_depth(rng, 4, 4);
      auto pred = random_positive(rng, {16}, 0.5, 10.0);
      record("silog_loss", grad_check([&] { return silog_loss(pred, gt); }, {pred}));
    }
    for (auto mode : {CrdeLossMode::linear, CrdeLossMode::log}) {
      auto target = normalize(random_depth(rng, 4, 4)).map;
      auto pred = random_tensor(rng, {16}, 0.5);
      record("crde_loss", grad_check([&] { return crde_loss(pred, target, {10, 0.85, mode}); }, {pred}));
    }
    {
      auto x = random_tensor(rng, {5, 6});
      auto gain = random_tensor(rng, {6});
      auto bias = random_tensor(rng, {6});
      record("layer_norm", grad_check([&] { return weighted_sum(layer_norm(x, gain, bias)); }, {x, gain, bias}));
    }
    {
      auto proj = ProjectionSet::create(4, 4, rng);
      auto table = PositionBiasTable::create(2, 2, rng);
      ParamList list;
      proj.collect("p", list);
      table.collect("b", list);
      perturb(list, rng, 0.3);
      auto plan = make_window_plan(3, 3, 2, 1);
      auto x = random_tensor(rng, {9, 4});
      auto tensors = tensors_of(list);
      tensors.push_back(x);
      record("attend", grad_check([&] { return weighted_sum(attend(partition_windows(x, plan), proj, table, plan)); },
                                  tensors));
    }
    {
      auto block = perturbed(TransformerBlockParams::create(4, {2, 0, 2}, rng), rng, 0.3, "t");
      ParamList list;
      block.collect("t", list);
      auto x = random_tensor(rng, {4, 4, 4});
      auto tensors = tensors_of(list);
      tensors.push_back(x);
      record("transformer_block", grad_check([&] { return weighted_sum(transformer_block(x, block)); }, tensors));
    }
    {
      auto mix = MixCoefficients::create(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
      auto layer = perturbed(MixingLayerParams::create(3, 4, {2, 0, 2}, rng, mix), rng, 0.3, "m");
      ParamList list;
      layer.collect("m", list);
      auto ze = random_tensor(rng, {3, 2, 2});
      auto zd = random_tensor(rng, {4, 2, 2});
      auto tensors = tensors_of(list);
      tensors.push_back(ze);
      tensors.push_back(zd);
      record("mixing_layer", grad_check([&] { return weighted_sum(mixing_layer(ze, zd, layer, 1)); }, tensors));
    }
    {
      auto conv = perturbed(ConversionLayerParams::create(4, {2, 0, 2}, true, false, rng), rng, 0.3, "c");
      ParamList list;
      conv.collect("c", list);
      auto z = random_tensor(rng, {4, 3, 3});
      auto tensors = tensors_of(list);
      tensors.push_back(z);
      record("conversion_layer", grad_check([&] {
               auto first = conversion_layer(z, conv, ConversionValue::anchor(conv.anchor), 0);
               return weighted_sum(conversion_layer(z, conv, ConversionValue::carried(first.attended), 1).tokens);
             },
                                            tensors));
    }
    {
      auto model = VdeModel::create(tiny_config(), rng);
      add_camera(model, "a", rng);
      add_camera(model, "b", rng);
      auto params = model.parameters();
      perturb(params, rng, 0.2);
      auto image = random_positive(rng, {3, 32, 32}, 0.0, 1.0, false);
      auto depth = random_depth(rng, 32, 32, 0.1);
      depth.camera = "b";
      TrainTarget target{"b", depth, normalize(depth).map};
      record("vde_forward/overall_loss", grad_check([&] { return overall_loss(model, {&image}, {&target}, {}); },
                                                    tensors_of(params), 1e-5, 2));
    }
  }
  Outcome o;
  double all = 0.0;
  for (const auto& [name, err] : worst) {
    all = std::max(all, err);
    if (err > 1e-4) {
      o.pass = false;
      o.detail += name + " " + fmt("%.2e", err) + "; ";
    }
  }
  const double secs = seconds_since(t0);
  if (secs > 120.0) o.pass = false;
  o.detail += "8 functions x 20 instances, worst error " + fmt("%.2e", all) + " (limit 1e-4), " + fmt("%.1f", secs) +
              " s (limit 120 s)";
  return o;
}

// 2 -----------------------------------------------------------------------

Outcome silog_identity() {
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(20000 + i);
    auto d = random_depth(rng, 8, 8);
    const double c = std::exp(rng.uniform(-3.0, 3.0));
    auto scaled = d;
    for (auto& v : scaled.depths) v *= c;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (!d.valid[k]) scaled.depths[k] = 1.0;  // ignored by the mask
    }
    const double got = silog_loss(scaled, d, {});
    worst = std::max(worst, std::abs(got - 10.0 * std::sqrt(0.15) * std::abs(std::log(c))));
  }
  return {worst <= 1e-9, "100 pairs, worst |L - 10 sqrt(0.15) |ln c|| = " + fmt("%.2e", worst) + " (limit 1e-9)"};
}

// 3 -----------------------------------------------------------------------

Outcome normalization() {
  double round_trip = 0.0, moments = 0.0, invariance = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(30000 + i);
    auto d = random_depth(rng, 8, 8);
    const auto n = normalize(d);
    const auto back = denormalize(n.map, n.stats);
    double mean = 0.0, sq = 0.0, count = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (!d.valid[k]) continue;
      round_trip = std::max(round_trip, std::abs(back.depths[k] - d.depths[k]));
      mean += n.map.values[k];
      count += 1.0;
    }
    mean /= count;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (d.valid[k]) sq += (n.map.values[k] - mean) * (n.map.values[k] - mean);
    }
    moments = std::max({moments, std::abs(mean), std::abs(std::sqrt(sq / count) - 1.0)});

    const double a = std::exp(rng.uniform(-2.0, 3.0)), b = rng.uniform(-5.0, 5.0);
    auto moved = d;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (d.valid[k]) moved.depths[k] = a * d.depths[k] + b;
    }
    moved.valid = d.valid;
    const auto m = normalize(moved).map;
    auto pred = random_tensor(rng, {64}, 1.0, false);
    for (auto mode : {CrdeLossMode::linear, CrdeLossMode::log}) {
      const double l1 = crde_loss(pred, n.map, {10, 0.85, mode}).item();
      const double l2 = crde_loss(pred, m, {10, 0.85, mode}).item();
      invariance = std::max(invariance, std::abs(l1 - l2));
    }
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (d.valid[k]) invariance = std::max(invariance, std::abs(m.values[k] - n.map.values[k]));
    }
  }
  const bool pass = round_trip <= 1e-9 && moments <= 1e-9 && invariance <= 1e-9;
  return {pass, "100 maps: round trip " + fmt("%.1e", round_trip) + ", mean/std " + fmt("%.1e", moments) +
                    ", affine invariance " + fmt("%.1e", invariance) + " (limit 1e-9)"};
}

// 4 -----------------------------------------------------------------------

Outcome kendall() {
  std::size_t mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    Rng rng(40000 + i);
    const std::size_t n = 2 + rng.below(499);
    const std::uint64_t levels = 1 + rng.below(n);  // few levels force ties
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = static_cast<double>(rng.below(levels));
    for (auto& v : b) v = static_cast<double>(rng.below(levels));
    for (auto mode : {TauMode::paper, TauMode::classical}) {
      const double fast = kendall_tau(a, b, mode), brute = kendall_tau_brute(a, b, mode);
      if (!(fast == brute || (std::isnan(fast) && std::isnan(brute)))) ++mismatches;
    }
  }
  Rng rng(49999);
  std::vector<double> a(50000), b(50000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform();
    b[i] = a[i] + rng.normal(0.0, 0.3);
  }
  const auto t0 = std::chrono::steady_clock::now();
  volatile double tau = kendall_tau(a, b, TauMode::paper);
  (void)tau;
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs <= 1.0, "200 vectors x 2 modes, " + std::to_string(mismatches) +
                                              " mismatches vs brute force; n=50000 in " + fmt("%.3f", secs) +
                                              " s (limit 1 s)"};
}

// 5 -----------------------------------------------------------------------

Outcome calibration() {
  std::size_t beaten = 0, imperfect = 0;
  for (int i = 0; i < 50; ++i) {
    Rng rng(50000 + i);
    auto gt = random_depth(rng, 8, 8);
    std::vector<double> rel(gt.size());
    for (auto& v : rel) v = rng.normal();
    const auto fit = calibrate_scale_shift(rel, gt);
    auto sse = [&](double m, double b) {
      double s = 0.0;
      for (std::size_t k = 0; k < gt.size(); ++k) {
        if (gt.valid[k]) s += (m * rel[k] + b - gt.depths[k]) * (m * rel[k] + b - gt.depths[k]);
      }
      return s;
    };
    const double best = sse(fit.m, fit.b);
    const double rounding = 1e-12 * best;
    for (int j = 0; j < 1000; ++j) {
      const double scale = std::pow(10.0, rng.uniform(-3.0, 0.0));
      if (sse(fit.m + rng.normal(0.0, scale), fit.b + rng.normal(0.0, scale)) < best - rounding) ++beaten;
    }
    const double a = std::exp(rng.uniform(-3.0, 3.0)), b = rng.uniform(-10.0, 10.0);
    std::vector<double> affine(gt.size());
    for (std::size_t k = 0; k < gt.size(); ++k) affine[k] = a * gt.depths[k] + b;
    if (relative_metrics(affine, gt).delta1 != 1.0) ++imperfect;
  }
  return {beaten == 0 && imperfect == 0, "50 instances: " + std::to_string(beaten) +
                                             " of 50000 perturbations beat the fit; " + std::to_string(imperfect) +
                                             " affine transforms with relative delta1 != 1"};
}

// 6 -----------------------------------------------------------------------

Outcome fmm_reductions() {
  double decoder_only = 0.0, encoder_qk = 0.0, mixing = 0.0, conversion = 0.0;
  auto random_layer = [](Rng& rng, std::size_t ce, std::size_t cd, std::size_t w, const MixCoefficients& mix) {
    auto p = MixingLayerParams::create(ce, cd, {w, 0, 2}, rng, mix);
    ParamList list;
    p.collect("m", list);
    for (auto& ref : list) {
      if (ref.name.find(".mix.") != std::string::npos) continue;
      for (auto& v : ref.tensor.mutable_values()) v += rng.normal(0.0, 0.3);
    }
    return p;
  };
  for (int i = 0; i < 20; ++i) {
    Rng rng(60000 + i);
    auto ze = random_tensor(rng, {6, 3, 3}, 1.0, false);
    auto zd = random_tensor(rng, {8, 3, 3}, 1.0, false);
    auto zero = random_layer(rng, 6, 8, 3, MixCoefficients::create(0, 0, 0));
    decoder_only = std::max(decoder_only, oracle::max_diff(mixing_layer(ze, zd, zero, 0), oracle::dense_decoder_only(zd, zero, 3)));
    auto yuan = random_layer(rng, 6, 8, 3, MixCoefficients::create(1, 1, 0));
    encoder_qk = std::max(encoder_qk, oracle::max_diff(mixing_layer(ze, zd, yuan, 0), oracle::dense_encoder_qk(ze, zd, yuan, 3)));
    auto mix = MixCoefficients::create(rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5));
    auto general = random_layer(rng, 6, 8, 3, mix);
    mixing = std::max(mixing, oracle::max_diff(mixing_layer(ze, zd, general, 0), oracle::dense_mixing(ze, zd, general, 3)));

    auto conv = perturbed(ConversionLayerParams::create(6, {3, 0, 2}, true, false, rng), rng, 0.3, "c");
    auto z = random_tensor(rng, {6, 3, 3}, 1.0, false);
    const auto got = conversion_layer(z, conv, ConversionValue::anchor(conv.anchor), 0);
    const auto want = oracle::dense_conversion(z, conv, 3);
    for (std::size_t r = 0; r < 9; ++r) {
      for (std::size_t c = 0; c < 6; ++c) {
        conversion = std::max(conversion, std::abs(got.tokens.at(r * 6 + c) - want.tokens[r][c]));
        conversion = std::max(conversion, std::abs(got.attended.at(r * 6 + c) - want.attended[r][c]));
      }
    }
  }
  const bool pass = std::max({decoder_only, encoder_qk, mixing, conversion}) <= 1e-9;
  return {pass, "20 instances: (0,0,0) vs decoder-only " + fmt("%.1e", decoder_only) + ", (1,1,0) vs encoder-QK " +
                    fmt("%.1e", encoder_qk) + ", mixing oracle " + fmt("%.1e", mixing) + ", conversion oracle " +
                    fmt("%.1e", conversion) + " (limit 1e-9)"};
}

// 7 -----------------------------------------------------------------------

Outcome structure() {
  Outcome o;
  const auto cfg = paper_config();
  const auto t = trace_shapes(cfg, 480, 640);
  const bool ladder = t.pooled == Shape{512, 15, 20} && t.relative == Shape{64, 120, 160} &&
                      t.head_low == Shape{1, 120, 160} && t.output == Shape{1, 480, 640};
  if (!ladder) o.pass = false;

  // the traced arithmetic against real forwards at paper width (reduced
  // resolution) and at toy width (full resolution)
  bool traced = true;
  {
    Rng rng(70000);
    auto model = VdeModel::create(cfg, rng);
    add_camera(model, "cam", rng);
    const auto counts = count_params(model);
    const double crde = static_cast<double>(counts.crde), r2mc = static_cast<double>(counts.r2mc.at("cam"));
    if (std::abs(crde - 149.8e6) > 0.02 * 149.8e6 || std::abs(r2mc - 1.7e6) > 0.1 * 1.7e6) o.pass = false;
    o.detail = "CRDE " + fmt("%.2fM", crde / 1e6) + " (149.8M +-2%), R2MC " + fmt("%.3fM", r2mc / 1e6) +
               " (1.7M +-10%); ";
    auto image = random_positive(rng, {3, 96, 128}, 0.0, 1.0, false);
    const auto out = vde_forward(model, image, "cam");
    const auto small = trace_shapes(cfg, 96, 128);
    traced &= out.relative.shape() == small.relative && out.metric.shape() == small.output &&
              out.normalized.shape() == small.output;
  }
  {
    Rng rng(70001);
    auto model = VdeModel::create(toy_config(), rng);
    add_camera(model, "cam", rng);
    auto image = random_positive(rng, {3, 480, 640}, 0.0, 1.0, false);
    const auto toy = trace_shapes(toy_config(), 480, 640);
    const auto out = vde_forward(model, image, "cam");
    traced &= out.relative.shape() == toy.relative && out.metric.shape() == Shape{1, 480, 640} &&
              toy.head_low == Shape{1, 120, 160};
  }
  if (!traced) o.pass = false;
  o.detail += std::string("ladder 480x640 -> Z_D ") + shape_to_string(t.pooled) + " -> Z_R " +
              shape_to_string(t.relative) + " -> " + shape_to_string(t.head_low) + " -> " + shape_to_string(t.output) +
              (ladder ? "" : " MISMATCH") + "; real forwards " + (traced ? "match" : "DIFFER");
  return o;
}

// 8 -----------------------------------------------------------------------

ExperimentConfig suite_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.iterations = 300;
  c.optimizer.lr_start = 5e-3;
  c.optimizer.lr_end = 5e-4;
  c.seed = seed;
  return c;
}

Outcome versatility(const std::vector<std::uint64_t>& seeds) {
  std::size_t passes = 0;
  std::string lines;
  for (auto seed : seeds) {
    const std::clock_t c0 = std::clock();
    DatasetSpec spec;
    spec.profiles = default_profiles();
    spec.seed = seed;
    const auto data = prepare_samples(generate_dataset(spec));
    const auto suite = run_setting_suite(suite_config(seed), data);
    const double cpu_minutes = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC / 60.0;
    const auto& vde = suite.runs.at(Setting::vde);
    const auto& single = suite.runs.at(Setting::single_network);
    const double tau_v = vde.evaluation.aggregate.values.at("kendall_tau");
    const double tau_s = single.evaluation.aggregate.values.at("kendall_tau");
    std::size_t wins = 0;
    std::string deltas;
    for (std::size_t k = 0; k < vde.evaluation.reports.size(); ++k) {
      const double dv = vde.evaluation.reports[k].values.at("delta1");
      const double ds = single.evaluation.reports[k].values.at("delta1");
      wins += dv > ds;
      deltas += " " + vde.evaluation.reports[k].dataset + " " + fmt("%.3f", dv) + "/" + fmt("%.3f", ds);
    }
    const std::size_t sep = suite.runs.at(Setting::separate_networks).parameters;
    const std::size_t multi = suite.runs.at(Setting::multiple_decoders).parameters;
    const bool a = tau_v >= tau_s, b = wins >= 2, c = sep > multi && multi > vde.parameters,
               time = cpu_minutes <= 30.0;
    const bool pass = a && b && c && time;
    passes += pass;
    lines += "\n    seed " + std::to_string(seed) + (pass ? " pass" : " fail") + ": (a) tau " + fmt("%.4f", tau_v) +
             " vs " + fmt("%.4f", tau_s) + (a ? "" : " x") + "; (b) delta1 vde/single" + deltas + (b ? "" : " x") +
             "; (c) params " + std::to_string(sep) + " > " + std::to_string(multi) + " > " +
             std::to_string(vde.parameters) + (c ? "" : " x") + "; " + fmt("%.1f", cpu_minutes) + " CPU-min" +
             (time ? "" : " x");
    std::fflush(stdout);
  }
  const std::size_t needed = seeds.size() >= 5 ? 4 : seeds.size();
  return {passes >= needed, std::to_string(passes) + " of " + std::to_string(seeds.size()) + " seeds pass (need " +
                                std::to_string(needed) + ")" + lines};
}

// 9 -----------------------------------------------------------------------

Outcome isolation() {
  bool identical = true, zero = true, own = true;
  for (int i = 0; i < 3; ++i) {
    Rng rng(90000 + i);
    auto model = VdeModel::create(toy_config(), rng);
    add_camera(model, "near", rng);
    add_camera(model, "far", rng);
    auto image = random_positive(rng, {3, 64, 64}, 0.0, 1.0, false);
    const auto before_near = vde_forward(model, image, "near");
    const auto before_far = vde_forward(model, image, "far");
    add_camera(model, "outdoor", rng);
    for (const auto& [cam, before] : {std::pair{"near", before_near}, std::pair{"far", before_far}}) {
      const auto after = vde_forward(model, image, cam);
      for (std::size_t k = 0; k < after.metric.numel(); ++k) {
        identical &= std::bit_cast<std::uint64_t>(after.metric.at(k)) == std::bit_cast<std::uint64_t>(before.metric.at(k));
        identical &= std::bit_cast<std::uint64_t>(after.normalized.at(k)) ==
                     std::bit_cast<std::uint64_t>(before.normalized.at(k));
      }
    }
    for (const CameraId cam : {"near", "far", "outdoor"}) {
      auto depth = random_depth(rng, 64, 64, 0.1);
      depth.camera = cam;
      TrainTarget target{cam, depth, normalize(depth).map};
      const auto params = model.parameters();
      for (auto p : params) p.tensor.clear_grad();
      overall_loss(model, {&image}, {&target}, {}).backward();
      double own_mass = 0.0;
      for (const auto& p : params) {
        if (p.name.rfind("r2mc.", 0) != 0) continue;
        const bool mine = p.name.rfind("r2mc." + cam + ".", 0) == 0;
        for (double g : p.tensor.grad()) {
          if (mine) {
            own_mass += std::abs(g);
          } else {
            zero &= g == 0.0;
          }
        }
      }
      own &= own_mass > 0.0;
      for (auto p : params) p.tensor.clear_grad();
    }
  }
  return {identical && zero && own, std::string("existing outputs ") + (identical ? "bit-identical" : "CHANGED") +
                                        " after add_camera; cross-camera converter gradients " +
                                        (zero ? "exactly zero" : "NONZERO") + (own ? "" : "; own gradient missing")};
}

// 10 ----------------------------------------------------------------------

Outcome determinism_io() {
  Outcome o;
  const auto dir = fs::temp_directory_path() / "vde_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  DatasetSpec spec;
  spec.profiles = default_profiles();
  for (auto& p : spec.profiles) p.height = p.width = 32;
  spec.train_scenes = 6;
  spec.test_scenes = 2;
  spec.seed = 11;
  const auto data = prepare_samples(generate_dataset(spec));
  ExperimentConfig cfg;
  cfg.model_overrides = model_config_to_json(tiny_config());
  cfg.iterations = 10;
  cfg.optimizer.batch = 2;
  cfg.optimizer.lr_start = 5e-3;
  cfg.seed = 5;
  TrainedModels trained;
  const auto first = run_report_json(run_experiment(cfg, data, {}, &trained), false).dump();
  const auto second = run_report_json(run_experiment(cfg, data, {}, nullptr), false).dump();
  const bool report = first == second;

  save_checkpoint(dir / "model.ckpt", *trained.shared);
  const auto loaded = load_vde_checkpoint(dir / "model.ckpt");
  bool ckpt = true;
  const auto a = trained.shared->parameters(), b = loaded.parameters();
  ckpt &= a.size() == b.size();
  for (std::size_t i = 0; ckpt && i < a.size(); ++i) {
    ckpt &= a[i].name == b[i].name && a[i].tensor.shape() == b[i].tensor.shape();
    for (std::size_t k = 0; ckpt && k < a[i].tensor.numel(); ++k) {
      ckpt &= std::bit_cast<std::uint64_t>(a[i].tensor.at(k)) == std::bit_cast<std::uint64_t>(b[i].tensor.at(k));
    }
  }

  Rng rng(100000);
  auto depth = random_depth(rng, 7, 5, 0.3);
  for (auto& v : depth.depths) v = static_cast<float>(v);
  depth.camera = "sensor-7";
  write_depth_dmb(dir / "d.dmb", depth);
  const auto back = read_depth_dmb(dir / "d.dmb");
  bool dmb = back.height == 7 && back.width == 5 && back.camera == "sensor-7" && back.valid == depth.valid;
  for (std::size_t k = 0; dmb && k < depth.size(); ++k) {
    if (depth.valid[k]) dmb &= std::bit_cast<std::uint64_t>(back.depths[k]) == std::bit_cast<std::uint64_t>(depth.depths[k]);
  }

  const fs::path fixtures(VDE_FIXTURE_DIR);
  const auto mm = read_depth(fixtures / "depth_mm.png");
  const auto lidar = read_depth(fixtures / "depth_kitti.png");
  const bool png = mm.camera == "kinect" && std::abs(mm.depths[0] - 2.5) < 1e-12 && !mm.valid[1] && mm.valid[2] &&
                   std::abs(mm.depths[2] - 0.001) < 1e-12 && std::abs(mm.depths[3] - 65.535) < 1e-9 &&
                   std::abs(mm.depths[4] - 1.0) < 1e-12 && !mm.valid[5] && lidar.camera == "lidar" &&
                   std::abs(lidar.depths[0] - 1.0) < 1e-12 && !lidar.valid[1] && std::abs(lidar.depths[2] - 2.0) < 1e-12 &&
                   std::abs(lidar.depths[3] - 300.0 / 256.0) < 1e-12;

  o.pass = report && ckpt && dmb && png;
  o.detail = std::string("RunReport ") + (report ? "bit-identical" : "DIFFERS") + "; checkpoint " +
             (ckpt ? "bit-exact" : "MISMATCH") + "; .dmb " + (dmb ? "bit-exact" : "MISMATCH") + "; PNG fixtures " +
             (png ? "scale and invalid conventions honored" : "WRONG");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  app.add_option("--only", only, "Criteria to run (default: all)");
  app.add_option("--seeds", seeds, "Seeds for the versatility suite");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"closed-form loss identity", silog_identity},
      {"normalization", normalization},
      {"Kendall tau", kendall},
      {"calibration optimality", calibration},
      {"FMM reductions", fmm_reductions},
      {"structural fidelity", structure},
      {"versatility experiment", [&] { return versatility(seeds); }},
      {"isolation", isolation},
      {"determinism and I/O", determinism_io},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
