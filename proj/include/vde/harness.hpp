#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vde/config.hpp"
#include "vde/metrics.hpp"
#include "vde/model.hpp"
#include "vde/synth.hpp"

namespace vde {

struct PreparedSample {
  std::string scene_id;
  CameraId camera;
  Tensor image;
  TrainTarget target;
};

struct PreparedData {
  std::vector<PreparedSample> train, test;
  std::vector<CameraId> cameras;  // sorted
};

/// Splits by Sample::split; `cameras` empty keeps every camera present.
PreparedData prepare_samples(const std::vector<Sample>& samples, const std::vector<CameraId>& cameras = {});
/// Reads the config's train/test manifests.
PreparedData load_data(const ExperimentConfig& cfg);

struct LossRecord {
  std::string stage;  // "step1", "step2", "train" or "train:<camera>"
  std::size_t epoch = 0;
  std::size_t iterations = 0;
  double loss = 0.0;
};

/// The trained networks of one setting.
struct TrainedModels {
  Setting setting = Setting::vde;
  std::optional<VdeModel> shared;  // vde, or the direct model of single_network
  std::map<CameraId, VdeModel> separate;
  std::optional<MultiDecoderModel> multi;

  Tensor metric(const Tensor& image, const CameraId& camera) const;
  /// Normalized prediction for vde; the metric map otherwise.
  Tensor relative(const Tensor& image, const CameraId& camera) const;
  std::size_t parameter_count() const;
};

struct IterationPlan {
  std::size_t total = 0;
  std::size_t step1 = 0, step2 = 0;           // vde
  std::map<CameraId, std::size_t> per_camera;  // separate_networks
};

/// Same total for every setting: explicit iterations, else
/// ceil((step1_epochs + step2_epochs) * N / batch).
IterationPlan plan_iterations(const ExperimentConfig& cfg, const PreparedData& data);

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  TrainedModels models;
  std::vector<LossRecord> losses;
  std::size_t iterations = 0;
};

/// Trains the configured setting. A non-finite loss or gradient writes the
/// current (last good) parameters to checkpoint_dir/last_good.ckpt and
/// throws NumericError.
TrainResult train_models(const ExperimentConfig& cfg, const PreparedData& data, const TrainOptions& options = {});

struct EvaluationResult {
  std::vector<MetricsReport> reports;  // per camera, sorted by camera
  AggregateReport aggregate;
};

EvaluationResult evaluate_models(const TrainedModels& models, const std::vector<PreparedSample>& samples,
                                 const std::vector<CameraId>& cameras, TauMode tau_mode, std::size_t tau_limit,
                                 std::uint64_t seed);

struct RunReport {
  ExperimentConfig config;
  std::uint64_t config_hash = 0;
  std::vector<LossRecord> losses;
  EvaluationResult evaluation;
  std::size_t parameters = 0;
  std::size_t iterations = 0;
  double wall_seconds = 0.0;
};

RunReport run_experiment(const ExperimentConfig& cfg, const PreparedData& data, const TrainOptions& options = {},
                         TrainedModels* trained = nullptr);
Json run_report_json(const RunReport& report, bool include_timing = true);
/// train subcommand: loads manifests, trains, evaluates on the test split
/// and writes report.json, metrics.csv, losses.csv, config.json and
/// checkpoints into `out`.
RunReport train_command(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// Evaluates a checkpoint on a manifest's samples. Cameras missing from a
/// VDE checkpoint are a LookupError unless `relative_fallback`, which scores
/// the normalized prediction after least-squares calibration instead.
EvaluationResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                     TauMode tau_mode, bool relative_fallback = false,
                                     std::size_t tau_limit = kTauSampleLimit);

/// Entry (i, j): tau of converter i on camera j's samples.
struct CrossEvalResult {
  std::vector<CameraId> cameras;
  std::vector<std::vector<double>> tau;
  std::vector<double> row_means;
};

CrossEvalResult cross_eval(const VdeModel& model, const std::vector<PreparedSample>& samples, TauMode tau_mode,
                           std::size_t tau_limit = kTauSampleLimit, std::uint64_t seed = 0);
std::string cross_eval_csv(const CrossEvalResult& result);
Json cross_eval_json(const CrossEvalResult& result);

struct SuiteResult {
  std::map<Setting, RunReport> runs;
};

/// Runs all four settings from one base config with the same iteration
/// total and seed.
SuiteResult run_setting_suite(const ExperimentConfig& base, const PreparedData& data, const TrainOptions& options = {});
/// Rows "setting,camera,metric,value" including geomean rows and parameter counts.
std::string suite_csv(const SuiteResult& suite);
Json suite_json(const SuiteResult& suite);

struct AblationCell {
  std::optional<double> alpha, beta, gamma;  // unset: learnable
  bool no_anchor = false;
};

struct CoefficientReadout {
  std::string layer;  // "fmm1.mix0" ...
  double alpha = 0.0, beta = 0.0, gamma = 0.0;
};

struct AblationRow {
  AblationCell cell;
  RunReport report;
  std::vector<CoefficientReadout> coefficients;
};

/// Grid JSON: {"cells": [{"alpha": a|null, "beta": .., "gamma": .., "no_anchor": bool}, ...]}.
/// A learnable row is appended when the grid lacks one.
std::vector<AblationCell> parse_grid(const Json& grid);
std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<AblationCell>& cells,
                                      const PreparedData& data, const TrainOptions& options = {});
std::vector<CoefficientReadout> read_coefficients(const VdeModel& model);
std::string ablation_csv(const std::vector<AblationRow>& rows);
Json ablation_json(const std::vector<AblationRow>& rows);

}  // namespace vde
