#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vde/metrics.hpp"
#include "vde/model.hpp"
#include "vde/synth.hpp"

namespace vde {

using Json = nlohmann::ordered_json;

enum class Setting { single_network, separate_networks, multiple_decoders, vde };

std::string to_string(Setting s);
std::string to_string(ScaleMode m);
std::string to_string(CrdeLossMode m);
std::string to_string(TauMode m);
Setting parse_setting(const std::string& s);
ScaleMode parse_scale_mode(const std::string& s);
CrdeLossMode parse_crde_mode(const std::string& s);
TauMode parse_tau_mode(const std::string& s);

Json model_config_to_json(const ModelConfig& cfg);
/// Keys present in `j` override `base`; unknown keys are a ConfigError.
ModelConfig model_config_from_json(const Json& j, ModelConfig base);
/// "toy" or "paper".
ModelConfig preset_config(const std::string& name);

struct OptimizerConfig {
  double lr_start = 2e-5;
  double lr_end = 1e-6;
  double weight_decay = 1e-2;
  std::size_t batch = 4;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

struct AblationFlags {
  std::optional<double> fix_alpha, fix_beta, fix_gamma;
  bool no_anchor = false;
  bool direct_metric = false;
  CrdeLossMode crde_mode = CrdeLossMode::linear;
  TauMode tau_mode = TauMode::paper;
  ScaleMode scale_mode = ScaleMode::head_dim;
};

struct ExperimentConfig {
  Setting setting = Setting::vde;
  std::string preset = "toy";
  Json model_overrides = Json::object();
  OptimizerConfig optimizer;
  double step1_epochs = 20.0;
  double step2_epochs = 20.0;
  /// Total optimizer steps; when set, overrides the epoch counts (vde splits
  /// it evenly between its two steps).
  std::optional<std::size_t> iterations;
  std::string train_manifest, test_manifest;
  std::vector<CameraId> cameras;  // empty: every camera in the manifests
  AblationFlags ablation;
  LossConfig loss;
  std::size_t tau_limit = kTauSampleLimit;
  std::uint64_t seed = 0;

  /// Preset, overrides and ablation flags folded into one model config.
  ModelConfig model() const;
};

Json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const Json& j);
ExperimentConfig load_experiment(const std::string& path);

/// Camera profiles from a JSON array (or {"profiles": [...]}); missing
/// fields take CameraProfile defaults.
std::vector<CameraProfile> profiles_from_json(const Json& j);
Json profiles_to_json(const std::vector<CameraProfile>& profiles);

/// FNV-1a over the canonical JSON text.
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace vde
