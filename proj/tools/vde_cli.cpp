#include <cstdio>
#include <filesystem>

#include "CLI11.hpp"
#include "vde/checkpoint.hpp"
#include "vde/config.hpp"
#include "vde/errors.hpp"
#include "vde/harness.hpp"
#include "vde/io.hpp"

namespace fs = std::filesystem;
using namespace vde;

namespace {

void log_stderr(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

void write_json(const fs::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

TauMode tau_option(const std::string& s) { return parse_tau_mode(s); }

int gen_data(const std::string& profiles_path, const fs::path& out, std::size_t scenes, std::size_t test_scenes,
             std::uint64_t seed) {
  DatasetSpec spec;
  spec.profiles = profiles_path.empty() ? default_profiles()
                                        : profiles_from_json(Json::parse(read_text_file(profiles_path)));
  spec.train_scenes = scenes;
  spec.test_scenes = test_scenes;
  spec.seed = seed;
  const auto samples = generate_dataset(spec);
  write_dataset(out, samples);
  write_json(out / "profiles.json", profiles_to_json(spec.profiles));
  std::printf("%zu samples written to %s\n", samples.size(), out.string().c_str());
  return 0;
}

int train(const std::string& config, const fs::path& out) {
  const auto report = train_command(load_experiment(config), out);
  for (const auto& r : report.evaluation.reports) {
    std::printf("%s tau %.4f delta1 %.4f rel %.4f\n", r.dataset.c_str(), r.values.at("kendall_tau"),
                r.values.at("delta1"), r.values.at("rel"));
  }
  return 0;
}

int eval(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out, const std::string& tau,
         bool fallback) {
  const auto result = evaluate_checkpoint(checkpoint, manifest, tau_option(tau), fallback);
  fs::create_directories(out);
  write_text_file(out / "metrics.csv", metrics_csv(result.reports, result.aggregate));
  write_text_file(out / "metrics.json", metrics_json(result.reports, result.aggregate) + "\n");
  std::fputs(metrics_csv(result.reports, result.aggregate).c_str(), stdout);
  return 0;
}

int cross(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out, const std::string& tau) {
  const auto model = load_vde_checkpoint(checkpoint);
  auto samples = load_manifest_samples(manifest);
  for (auto& s : samples) s.split = "test";
  const auto data = prepare_samples(samples);
  const auto result = cross_eval(model, data.test, tau_option(tau));
  fs::create_directories(out);
  write_text_file(out / "cross_eval.csv", cross_eval_csv(result));
  write_json(out / "cross_eval.json", cross_eval_json(result));
  std::fputs(cross_eval_csv(result).c_str(), stdout);
  return 0;
}

int suite(const std::string& config, const fs::path& out) {
  const auto cfg = load_experiment(config);
  const auto data = load_data(cfg);
  TrainOptions options;
  options.checkpoint_dir = out;
  options.log = log_stderr;
  const auto result = run_setting_suite(cfg, data, options);
  write_text_file(out / "suite.csv", suite_csv(result));
  write_json(out / "suite.json", suite_json(result));
  std::fputs(suite_csv(result).c_str(), stdout);
  return 0;
}

int ablate(const std::string& config, const std::string& grid, const fs::path& out) {
  const auto cfg = load_experiment(config);
  Json grid_json;
  try {
    grid_json = Json::parse(read_text_file(grid));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(grid + ": " + e.what());
  }
  const auto cells = parse_grid(grid_json);
  const auto data = load_data(cfg);
  TrainOptions options;
  options.log = log_stderr;
  const auto rows = run_ablation(cfg, cells, data, options);
  fs::create_directories(out);
  write_text_file(out / "ablation.csv", ablation_csv(rows));
  write_json(out / "ablation.json", ablation_json(rows));
  std::fputs(ablation_csv(rows).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Versatile depth estimation toolkit"};
  app.require_subcommand(1);

  std::string profiles, config, grid, tau = "paper", out_dir;
  fs::path out, checkpoint, manifest;
  std::size_t scenes = 300, test_scenes = 50;
  std::uint64_t seed = 0;
  bool fallback = false;

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic multi-camera dataset");
  gen->add_option("--profiles", profiles, "Camera profile JSON (default: near, far, outdoor)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--scenes", scenes, "Training scenes per camera");
  gen->add_option("--test-scenes", test_scenes, "Test scenes per camera");
  gen->add_option("--seed", seed, "Generator seed");

  auto* tr = app.add_subcommand("train", "Train one setting and evaluate it on the test split");
  tr->add_option("--config", config, "Experiment JSON")->required();
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--manifest", manifest)->required();
  ev->add_option("--out", out)->required();
  ev->add_option("--tau-mode", tau)->check(CLI::IsMember({"paper", "classical"}));
  ev->add_flag("--relative-fallback", fallback, "Score cameras without a converter on calibrated relative depth");

  auto* cr = app.add_subcommand("cross-eval", "Tau of every converter on every camera's samples");
  cr->add_option("--checkpoint", checkpoint)->required();
  cr->add_option("--manifest", manifest)->required();
  cr->add_option("--out", out)->required();
  cr->add_option("--tau-mode", tau)->check(CLI::IsMember({"paper", "classical"}));

  auto* su = app.add_subcommand("suite", "Run the four settings at equal iteration budgets");
  su->add_option("--config", config)->required();
  su->add_option("--out", out, "Output directory")->default_val("suite_out");

  auto* ab = app.add_subcommand("ablate", "Run a mixing-coefficient grid");
  ab->add_option("--config", config)->required();
  ab->add_option("--grid", grid)->required();
  ab->add_option("--out", out, "Output directory")->default_val("ablation_out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return gen_data(profiles, out, scenes, test_scenes, seed);
    if (*tr) return train(config, out);
    if (*ev) return eval(checkpoint, manifest, out, tau, fallback);
    if (*cr) return cross(checkpoint, manifest, out, tau);
    if (*su) return suite(config, out);
    if (*ab) return ablate(config, grid, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
