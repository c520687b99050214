#include <gtest/gtest.h>

#include <bit>
#include <filesystem>

#include "vde/checkpoint.hpp"
#include "vde/errors.hpp"
#include "vde/harness.hpp"
#include "vde/io.hpp"
#include "vde/optim.hpp"

using namespace vde;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "vde_harness_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<Sample> small_samples(std::uint64_t seed = 5) {
  DatasetSpec spec;
  spec.profiles = default_profiles();
  for (auto& p : spec.profiles) p.height = p.width = 32;
  spec.train_scenes = 4;
  spec.test_scenes = 2;
  spec.seed = seed;
  return generate_dataset(spec);
}

const PreparedData& small_data() {
  static const PreparedData data = prepare_samples(small_samples());
  return data;
}

ExperimentConfig small_config(Setting setting) {
  ExperimentConfig c;
  c.setting = setting;
  c.model_overrides = Json{{"encoder", {{"widths", {8, 8, 8, 8}}}},
                           {"decoder", {{"width", 8}, {"bins", {1, 2}}, {"widths", {8, 8, 8}}, {"hidden", {8, 8, 8}}}},
                           {"r2mc_width", 8}};
  c.optimizer.lr_start = 5e-3;
  c.optimizer.lr_end = 5e-4;
  c.optimizer.batch = 2;
  c.iterations = 12;
  c.seed = 3;
  return c;
}

bool same_values(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].tensor.numel(); ++k) {
      if (std::bit_cast<std::uint64_t>(a[i].tensor.at(k)) != std::bit_cast<std::uint64_t>(b[i].tensor.at(k))) {
        return false;
      }
    }
  }
  return true;
}

ParamList snapshot(const ParamList& params) {
  ParamList out;
  for (const auto& p : params) out.push_back({p.name, p.tensor.clone(), p.decay});
  return out;
}

}  // namespace

TEST(Data, PrepareSplitsAndNormalizes) {
  const auto& data = small_data();
  EXPECT_EQ(data.train.size(), 12u);
  EXPECT_EQ(data.test.size(), 6u);
  EXPECT_EQ(data.cameras, (std::vector<CameraId>{"far", "near", "outdoor"}));
  for (const auto& s : data.train) {
    EXPECT_EQ(s.image.shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(s.target.camera, s.camera);
    EXPECT_EQ(s.target.normalized.values.size(), 32u * 32u);
  }
  auto only = prepare_samples(small_samples(), {"near"});
  EXPECT_EQ(only.cameras, (std::vector<CameraId>{"near"}));
  EXPECT_THROW(prepare_samples(small_samples(), {"thermal"}), LookupError);
}

TEST(Plan, IterationsAreEqualizedExactly) {
  auto cfg = small_config(Setting::vde);
  cfg.iterations = 31;
  const auto plan = plan_iterations(cfg, small_data());
  EXPECT_EQ(plan.total, 31u);
  EXPECT_EQ(plan.step1 + plan.step2, 31u);
  std::size_t sum = 0;
  for (const auto& [_, n] : plan.per_camera) sum += n;
  EXPECT_EQ(sum, 31u);
  cfg.iterations.reset();
  cfg.step1_epochs = 2;
  cfg.step2_epochs = 1;
  const auto epochs = plan_iterations(cfg, small_data());
  EXPECT_EQ(epochs.total, 18u);  // 3 epochs * 12 samples / batch 2
  EXPECT_EQ(epochs.step1, 12u);
  EXPECT_EQ(epochs.step2, 6u);
}

TEST(Train, VdeStepOneCheckpointHasNoConverters) {
  const auto dir = temp_dir("vde");
  TrainOptions options;
  options.checkpoint_dir = dir;
  auto result = train_models(small_config(Setting::vde), small_data(), options);
  auto step1 = load_vde_checkpoint(dir / "step1.ckpt");
  EXPECT_TRUE(step1.r2mcs.empty());
  auto step2 = load_vde_checkpoint(dir / "step2.ckpt");
  EXPECT_EQ(step2.r2mcs.size(), 3u);
  EXPECT_TRUE(same_values(step2.parameters(), result.models.shared->parameters()));
  std::size_t step1_iters = 0, step2_iters = 0;
  for (const auto& l : result.losses) (l.stage == "step1" ? step1_iters : step2_iters) += l.iterations;
  EXPECT_EQ(step1_iters + step2_iters, 12u);
  EXPECT_EQ(step1_iters, 6u);
}

TEST(Train, ConverterOfAbsentCameraIsUnchangedByAStep) {
  auto cfg = small_config(Setting::vde);
  Rng rng(1);
  auto model = VdeModel::create(cfg.model(), rng);
  for (const auto& c : small_data().cameras) add_camera(model, c, rng);
  const auto params = model.parameters();
  const auto before = snapshot(params);
  OptimizerConfig opt_cfg;
  opt_cfg.weight_decay = 1e-2;
  AdamW opt(params, opt_cfg);
  const auto& sample = small_data().train.front();  // one camera only
  overall_loss(model, {&sample.image}, {&sample.target}, cfg.loss).backward();
  opt.step(1e-2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool other = params[i].name.rfind("r2mc.", 0) == 0 && params[i].name.rfind("r2mc." + sample.camera + ".", 0) != 0;
    if (!other) continue;
    for (std::size_t k = 0; k < params[i].tensor.numel(); ++k) {
      EXPECT_EQ(params[i].tensor.at(k), before[i].tensor.at(k)) << params[i].name;
    }
  }
}

TEST(Train, EverySettingTrainsAndEvaluates) {
  for (auto s : {Setting::single_network, Setting::separate_networks, Setting::multiple_decoders, Setting::vde}) {
    auto report = run_experiment(small_config(s), small_data());
    EXPECT_EQ(report.iterations, 12u) << to_string(s);
    EXPECT_EQ(report.evaluation.reports.size(), 3u);
    for (const auto& r : report.evaluation.reports) {
      EXPECT_EQ(r.images, 2u);
      for (const auto& [name, v] : r.values) EXPECT_TRUE(std::isfinite(v)) << name;
    }
    std::size_t iters = 0;
    for (const auto& l : report.losses) iters += l.iterations;
    EXPECT_EQ(iters, 12u) << to_string(s);
  }
}

TEST(Train, DirectMetricAblationUsesTheDirectHead) {
  auto cfg = small_config(Setting::vde);
  cfg.ablation.direct_metric = true;
  auto result = train_models(cfg, small_data());
  ASSERT_TRUE(result.models.shared.has_value());
  EXPECT_TRUE(result.models.shared->direct_head.has_value());
  EXPECT_TRUE(result.models.shared->r2mcs.empty());
}

TEST(Train, SameSeedReproducesReportBitForBit) {
  const auto cfg = small_config(Setting::vde);
  const auto a = run_report_json(run_experiment(cfg, small_data()), false).dump();
  const auto b = run_report_json(run_experiment(cfg, small_data()), false).dump();
  EXPECT_EQ(a, b);
  auto other = cfg;
  other.seed = 4;
  EXPECT_NE(run_report_json(run_experiment(other, small_data()), false).dump(), a);
}

TEST(Train, LossDescendsOverEpochs) {
  auto cfg = small_config(Setting::single_network);
  cfg.iterations = 60;  // ten epochs of six batches
  auto result = train_models(cfg, small_data());
  ASSERT_GE(result.losses.size(), 2u);
  EXPECT_LE(result.losses.back().loss, result.losses.front().loss);
}

TEST(Train, NonFiniteLossAbortsWithLastGoodCheckpoint) {
  auto data = small_data();
  data.train[0].image = data.train[0].image.clone();
  data.train[0].image.mutable_values()[0] = std::nan("");
  for (auto& s : data.train) s.image = data.train[0].image;
  const auto dir = temp_dir("nan");
  TrainOptions options;
  options.checkpoint_dir = dir;
  EXPECT_THROW(train_models(small_config(Setting::single_network), data, options), NumericError);
  EXPECT_TRUE(fs::exists(dir / "last_good.ckpt"));
  EXPECT_NO_THROW(load_vde_checkpoint(dir / "last_good.ckpt"));
}

TEST(Evaluate, CheckpointOnManifest) {
  const auto dir = temp_dir("eval");
  write_dataset(dir / "data", small_samples());
  auto cfg = small_config(Setting::vde);
  cfg.train_manifest = (dir / "data" / "train.csv").string();
  cfg.test_manifest = (dir / "data" / "test.csv").string();
  const auto report = train_command(cfg, dir / "run");
  for (const char* f : {"report.json", "metrics.csv", "losses.csv", "config.json", "model.ckpt", "step1.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  const auto eval = evaluate_checkpoint(dir / "run" / "model.ckpt", dir / "data" / "test.csv", TauMode::paper);
  ASSERT_EQ(eval.reports.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(eval.reports[i].values.at("kendall_tau"), report.evaluation.reports[i].values.at("kendall_tau"));
  }

  auto model = load_vde_checkpoint(dir / "run" / "model.ckpt");
  model.r2mcs.erase("near");
  save_checkpoint(dir / "partial.ckpt", model);
  EXPECT_THROW(evaluate_checkpoint(dir / "partial.ckpt", dir / "data" / "test.csv", TauMode::paper), LookupError);
  const auto fallback = evaluate_checkpoint(dir / "partial.ckpt", dir / "data" / "test.csv", TauMode::paper, true);
  EXPECT_EQ(fallback.reports.size(), 3u);

  write_manifest(dir / "empty.csv", {});
  EXPECT_THROW(evaluate_checkpoint(dir / "run" / "model.ckpt", dir / "empty.csv", TauMode::paper), DegenerateInputError);
}

TEST(Evaluate, CrossEvalDiagonalMatchesEvaluation) {
  TrainedModels trained;
  const auto cfg = small_config(Setting::vde);
  const auto report = run_experiment(cfg, small_data(), {}, &trained);
  const auto cross = cross_eval(*trained.shared, small_data().test, TauMode::paper, cfg.tau_limit, cfg.seed);
  ASSERT_EQ(cross.tau.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    ASSERT_EQ(cross.tau[i].size(), 3u);
    EXPECT_EQ(cross.tau[i][i], report.evaluation.reports[i].values.at("kendall_tau"));
  }
  EXPECT_EQ(cross.row_means.size(), 3u);
  EXPECT_NE(cross_eval_csv(cross).find("converter,far,near,outdoor,mean"), std::string::npos);
}

TEST(Suite, RunsFourSettingsWithOrderedParameterCounts) {
  const auto suite = run_setting_suite(small_config(Setting::vde), small_data());
  ASSERT_EQ(suite.runs.size(), 4u);
  const auto& r = suite.runs;
  EXPECT_GT(r.at(Setting::separate_networks).parameters, r.at(Setting::multiple_decoders).parameters);
  EXPECT_GT(r.at(Setting::multiple_decoders).parameters, r.at(Setting::vde).parameters);
  for (const auto& [_, run] : r) EXPECT_EQ(run.iterations, 12u);
  const auto csv = suite_csv(suite);
  std::size_t rows = 0;
  for (char c : csv) rows += c == '\n';
  // header + 4 settings x (3 cameras x 9 metrics + 9 geomean + 2 counts)
  EXPECT_EQ(rows, 1u + 4u * (3u * 9u + 9u + 2u));
  auto one = small_data();
  one.cameras.resize(1);
  EXPECT_THROW(run_setting_suite(small_config(Setting::vde), one), ConfigError);
}

TEST(Ablation, GridRowsAndCoefficientReadout) {
  const auto cells = parse_grid(Json::parse(R"({"cells": [{"alpha": 0, "beta": 0, "gamma": 0}, {"no_anchor": true}]})"));
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_FALSE(cells[2].alpha || cells[2].beta || cells[2].gamma || cells[2].no_anchor);
  auto base = small_config(Setting::vde);
  base.iterations = 4;
  const auto rows = run_ablation(base, cells, small_data());
  ASSERT_EQ(rows.size(), 3u);
  ASSERT_EQ(rows[0].coefficients.size(), 6u);
  for (const auto& c : rows[0].coefficients) {
    EXPECT_EQ(c.alpha, 0.0);
    EXPECT_EQ(c.beta, 0.0);
    EXPECT_EQ(c.gamma, 0.0);
  }
  EXPECT_EQ(rows[0].coefficients[0].layer, "fmm1.mix0");
  bool moved = false;
  for (const auto& c : rows[2].coefficients) moved |= c.alpha != 0.5;
  EXPECT_TRUE(moved);
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_THROW(parse_grid(Json::parse(R"({"cells": [{"delta": 1}]})")), ConfigError);
  EXPECT_THROW(parse_grid(Json::parse(R"([])")), ConfigError);
}
