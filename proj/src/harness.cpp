#include "vde/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "vde/checkpoint.hpp"
#include "vde/errors.hpp"
#include "vde/io.hpp"
#include "vde/optim.hpp"

namespace vde {

PreparedData prepare_samples(const std::vector<Sample>& samples, const std::vector<CameraId>& cameras) {
  std::set<CameraId> wanted(cameras.begin(), cameras.end());
  std::set<CameraId> seen;
  PreparedData data;
  for (const auto& s : samples) {
    if (!wanted.empty() && !wanted.count(s.camera)) continue;
    PreparedSample p{s.scene_id, s.camera, image_tensor(s.rgb), {s.camera, s.depth, normalize(s.depth).map}};
    p.target.depth.camera = s.camera;
    seen.insert(s.camera);
    if (s.split == "train") {
      data.train.push_back(std::move(p));
    } else if (s.split == "test") {
      data.test.push_back(std::move(p));
    } else {
      throw FormatError("sample " + s.scene_id + ": unknown split '" + s.split + "'");
    }
  }
  for (const auto& c : wanted) {
    if (!seen.count(c)) throw LookupError("no samples for camera '" + c + "'");
  }
  data.cameras.assign(seen.begin(), seen.end());
  return data;
}

PreparedData load_data(const ExperimentConfig& cfg) {
  if (cfg.train_manifest.empty()) throw ConfigError("config: train_manifest is required");
  auto samples = load_manifest_samples(cfg.train_manifest);
  if (!cfg.test_manifest.empty() && cfg.test_manifest != cfg.train_manifest) {
    auto test = load_manifest_samples(cfg.test_manifest);
    samples.insert(samples.end(), std::make_move_iterator(test.begin()), std::make_move_iterator(test.end()));
  }
  return prepare_samples(samples, cfg.cameras);
}

Tensor TrainedModels::metric(const Tensor& image, const CameraId& camera) const {
  switch (setting) {
    case Setting::vde:
      if (shared->direct_head) return direct_forward(*shared, image);
      return vde_forward(*shared, image, camera).metric;
    case Setting::single_network:
      return direct_forward(*shared, image);
    case Setting::separate_networks: {
      auto it = separate.find(camera);
      if (it == separate.end()) throw LookupError("separate networks: unknown camera '" + camera + "'");
      return direct_forward(it->second, image);
    }
    case Setting::multiple_decoders:
      return multi_decoder_forward(*multi, image, camera);
  }
  throw ConfigError("unknown setting");
}

Tensor TrainedModels::relative(const Tensor& image, const CameraId& camera) const {
  if (setting == Setting::vde && !shared->direct_head) return crde_forward(image, shared->crde, shared->config).normalized;
  return metric(image, camera);
}

std::size_t TrainedModels::parameter_count() const {
  std::size_t n = 0;
  if (shared) n += count_params(*shared).total;
  for (const auto& [_, m] : separate) n += count_params(m).total;
  if (multi) n += count_params(*multi);
  return n;
}

IterationPlan plan_iterations(const ExperimentConfig& cfg, const PreparedData& data) {
  if (data.train.empty()) throw DegenerateInputError("no training samples");
  IterationPlan plan;
  const double epochs = cfg.step1_epochs + cfg.step2_epochs;
  const double batch = static_cast<double>(cfg.optimizer.batch);
  plan.total = cfg.iterations ? *cfg.iterations
                              : static_cast<std::size_t>(std::ceil(epochs * static_cast<double>(data.train.size()) / batch));
  const double share = epochs > 0.0 ? cfg.step1_epochs / epochs : 0.5;
  plan.step1 = static_cast<std::size_t>(std::llround(share * static_cast<double>(plan.total)));
  plan.step2 = plan.total - plan.step1;
  const std::size_t k = data.cameras.size();
  for (std::size_t i = 0; i < k; ++i) plan.per_camera[data.cameras[i]] = plan.total / k + (i < plan.total % k ? 1 : 0);
  return plan;
}

namespace {

class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, Rng rng) : pool_(std::move(pool)), rng_(std::move(rng)) {}

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_ = pool_;
    rng_.shuffle(order_);
    cursor_ = 0;
  }
  std::vector<std::size_t> pool_, order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

struct Stage {
  std::string name;
  ParamList params;
  std::vector<std::size_t> pool;
  std::size_t iterations = 0;
  std::function<Tensor(const PreparedSample&)> loss;
};

void log_line(const TrainOptions& options, const std::string& line) {
  if (options.log) options.log(line);
}

void run_stage(const Stage& stage, const ExperimentConfig& cfg, const PreparedData& data, const Rng& rng,
               std::vector<LossRecord>& records, const TrainOptions& options,
               const std::function<void(const std::filesystem::path&)>& save) {
  if (stage.iterations == 0) return;
  if (stage.pool.empty()) throw DegenerateInputError(stage.name + ": no training samples");
  AdamW opt(stage.params, cfg.optimizer);
  BatchSampler sampler(stage.pool, rng.split(stage.name));
  const std::size_t batch = cfg.optimizer.batch;
  const std::size_t epoch_len = (stage.pool.size() + batch - 1) / batch;
  double running = 0.0;
  std::size_t in_epoch = 0, epoch = 0;
  auto fail = [&](const std::string& what) {
    if (options.checkpoint_dir) save(*options.checkpoint_dir / "last_good.ckpt");
    throw NumericError(stage.name + ": " + what + " at iteration " + std::to_string(opt.steps() + 1));
  };
  for (std::size_t it = 0; it < stage.iterations; ++it) {
    Tensor total;
    try {
      for (std::size_t idx : sampler.next(batch)) {
        auto term = stage.loss(data.train[idx]);
        total = total.defined() ? add(total, term) : term;
      }
    } catch (const NumericError& e) {
      fail(e.what());
    }
    total = affine(total, 1.0 / static_cast<double>(batch));
    const double value = total.item();
    if (!std::isfinite(value)) fail("non-finite loss");
    total.backward();
    try {
      opt.step(linear_lr(cfg.optimizer, it, stage.iterations));
    } catch (const NumericError&) {
      opt.clear_grads();
      fail("non-finite gradient");
    }
    running += value;
    ++in_epoch;
    if (in_epoch == epoch_len || it + 1 == stage.iterations) {
      records.push_back({stage.name, ++epoch, in_epoch, running / static_cast<double>(in_epoch)});
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s epoch %zu loss %.6f", stage.name.c_str(), epoch, records.back().loss);
      log_line(options, buf);
      running = 0.0;
      in_epoch = 0;
    }
  }
}

std::vector<std::size_t> all_indices(const PreparedData& data) {
  std::vector<std::size_t> v(data.train.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<std::size_t> camera_indices(const PreparedData& data, const CameraId& camera) {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    if (data.train[i].camera == camera) v.push_back(i);
  }
  return v;
}

void save_if(const TrainOptions& options, const std::string& name, const VdeModel& m) {
  if (options.checkpoint_dir) save_checkpoint(*options.checkpoint_dir / name, m);
}

}  // namespace

TrainResult train_models(const ExperimentConfig& cfg, const PreparedData& data, const TrainOptions& options) {
  const auto mcfg = cfg.model();
  const auto plan = plan_iterations(cfg, data);
  const Rng root(cfg.seed);
  const Rng model_rng = root.split("model");
  const Rng batch_rng = root.split("batches");
  const LossConfig loss = cfg.loss;
  TrainResult result;
  auto& models = result.models;
  models.setting = cfg.setting;
  result.iterations = plan.total;

  const bool direct = cfg.setting == Setting::single_network || (cfg.setting == Setting::vde && cfg.ablation.direct_metric);
  if (direct) {
    Rng r = model_rng;
    models.shared = VdeModel::create_direct(mcfg, r);
    const auto& m = *models.shared;
    Stage stage{"train", m.parameters(), all_indices(data), plan.total,
                [&](const PreparedSample& s) { return silog_loss(direct_forward(m, s.image), s.target.depth, loss); }};
    run_stage(stage, cfg, data, batch_rng, result.losses, options,
              [&](const std::filesystem::path& p) { save_checkpoint(p, m); });
    save_if(options, "model.ckpt", m);
    return result;
  }

  switch (cfg.setting) {
    case Setting::separate_networks:
      for (const auto& cam : data.cameras) {
        Rng r = model_rng.split(std::string_view(cam));
        auto [it, _] = models.separate.emplace(cam, VdeModel::create_direct(mcfg, r));
        const auto& m = it->second;
        Stage stage{"train:" + cam, m.parameters(), camera_indices(data, cam), plan.per_camera.at(cam),
                    [&](const PreparedSample& s) { return silog_loss(direct_forward(m, s.image), s.target.depth, loss); }};
        run_stage(stage, cfg, data, batch_rng, result.losses, options,
                  [&](const std::filesystem::path& p) { save_checkpoint(p, m); });
        save_if(options, "model_" + cam + ".ckpt", m);
      }
      break;
    case Setting::multiple_decoders: {
      Rng r = model_rng;
      models.multi = MultiDecoderModel::create(mcfg, data.cameras, r);
      const auto& m = *models.multi;
      Stage stage{"train", m.parameters(), all_indices(data), plan.total, [&](const PreparedSample& s) {
                    return silog_loss(multi_decoder_forward(m, s.image, s.camera), s.target.depth, loss);
                  }};
      run_stage(stage, cfg, data, batch_rng, result.losses, options,
                [&](const std::filesystem::path& p) { save_checkpoint(p, m); });
      if (options.checkpoint_dir) save_checkpoint(*options.checkpoint_dir / "model.ckpt", m);
      break;
    }
    case Setting::vde: {
      Rng r = model_rng;
      models.shared = VdeModel::create(mcfg, r);
      auto& m = *models.shared;
      auto saver = [&](const std::filesystem::path& p) { save_checkpoint(p, m); };
      Stage step1{"step1", m.parameters(), all_indices(data), plan.step1, [&](const PreparedSample& s) {
                    return crde_loss(crde_forward(s.image, m.crde, m.config).normalized, s.target.normalized, loss);
                  }};
      run_stage(step1, cfg, data, batch_rng, result.losses, options, saver);
      save_if(options, "step1.ckpt", m);
      Rng cams = model_rng.split("cameras");
      for (const auto& cam : data.cameras) add_camera(m, cam, cams);
      Stage step2{"step2", m.parameters(), all_indices(data), plan.step2, [&](const PreparedSample& s) {
                    auto out = vde_forward(m, s.image, s.camera);
                    return add(crde_sample_loss(out, s.target, loss), silog_loss(out.metric, s.target.depth, loss));
                  }};
      run_stage(step2, cfg, data, batch_rng, result.losses, options, saver);
      save_if(options, "step2.ckpt", m);
      save_if(options, "model.ckpt", m);
      break;
    }
    case Setting::single_network:
      break;
  }
  return result;
}

EvaluationResult evaluate_models(const TrainedModels& models, const std::vector<PreparedSample>& samples,
                                 const std::vector<CameraId>& cameras, TauMode tau_mode, std::size_t tau_limit,
                                 std::uint64_t seed) {
  EvaluationResult result;
  for (const auto& cam : cameras) {
    MetricsAccumulator acc(cam, {tau_mode, RmseForm::root_mean, tau_limit, seed});
    for (const auto& s : samples) {
      if (s.camera != cam) continue;
      const auto metric = models.metric(s.image, cam);
      const auto relative = models.setting == Setting::vde && !models.shared->direct_head
                                ? models.relative(s.image, cam)
                                : metric;
      const auto& t = s.target.depth;
      auto values = metric.values();
      acc.add(DepthMap::dense(t.height, t.width, {values.begin(), values.end()}, cam), relative.values(), t);
    }
    result.reports.push_back(acc.finish());
  }
  result.aggregate = aggregate(result.reports);
  return result;
}

RunReport run_experiment(const ExperimentConfig& cfg, const PreparedData& data, const TrainOptions& options,
                         TrainedModels* trained) {
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.config = cfg;
  report.config_hash = config_hash(cfg);
  auto result = train_models(cfg, data, options);
  report.losses = std::move(result.losses);
  report.iterations = result.iterations;
  report.parameters = result.models.parameter_count();
  report.evaluation = evaluate_models(result.models, data.test, data.cameras, cfg.ablation.tau_mode, cfg.tau_limit, cfg.seed);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (trained) *trained = std::move(result.models);
  return report;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json evaluation_json(const EvaluationResult& e) { return Json::parse(metrics_json(e.reports, e.aggregate)); }

std::string losses_csv(const std::vector<LossRecord>& losses) {
  std::ostringstream out;
  out.precision(17);
  out << "stage,epoch,iterations,loss\n";
  for (const auto& l : losses) out << l.stage << ',' << l.epoch << ',' << l.iterations << ',' << l.loss << '\n';
  return out.str();
}

}  // namespace

Json run_report_json(const RunReport& r, bool include_timing) {
  Json losses = Json::array();
  for (const auto& l : r.losses) {
    losses.push_back({{"stage", l.stage}, {"epoch", l.epoch}, {"iterations", l.iterations}, {"loss", l.loss}});
  }
  Json j{{"setting", to_string(r.config.setting)},
         {"config_hash", hex64(r.config_hash)},
         {"config", experiment_to_json(r.config)},
         {"iterations", r.iterations},
         {"parameters", r.parameters},
         {"losses", losses},
         {"metrics", evaluation_json(r.evaluation)}};
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

RunReport train_command(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  const auto data = load_data(cfg);
  std::filesystem::create_directories(out);
  write_text_file(out / "config.json", experiment_to_json(cfg).dump(2) + "\n");
  TrainOptions options;
  options.checkpoint_dir = out;
  options.log = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
  auto report = run_experiment(cfg, data, options);
  write_text_file(out / "report.json", run_report_json(report).dump(2) + "\n");
  write_text_file(out / "metrics.csv", metrics_csv(report.evaluation.reports, report.evaluation.aggregate));
  write_text_file(out / "losses.csv", losses_csv(report.losses));
  return report;
}

EvaluationResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                     TauMode tau_mode, bool relative_fallback, std::size_t tau_limit) {
  auto any = load_checkpoint(checkpoint);
  auto samples = load_manifest_samples(manifest);
  for (auto& s : samples) s.split = "test";
  auto data = prepare_samples(samples);
  if (data.test.empty()) throw DegenerateInputError(manifest.string() + ": no samples");
  TrainedModels models;
  if (auto* m = std::get_if<MultiDecoderModel>(&any)) {
    models.setting = Setting::multiple_decoders;
    for (const auto& c : data.cameras) {
      if (!m->decoders.count(c)) throw LookupError("checkpoint has no decoder for camera '" + c + "'");
    }
    models.multi = std::move(*m);
    return evaluate_models(models, data.test, data.cameras, tau_mode, tau_limit, 0);
  }
  auto& vm = std::get<VdeModel>(any);
  models.setting = vm.direct_head ? Setting::single_network : Setting::vde;
  std::vector<CameraId> known, missing;
  for (const auto& c : data.cameras) {
    (models.setting == Setting::vde && !vm.r2mcs.count(c) ? missing : known).push_back(c);
  }
  if (!missing.empty() && !relative_fallback) {
    throw LookupError("checkpoint has no converter for camera '" + missing.front() + "'");
  }
  models.shared = std::move(vm);
  auto result = evaluate_models(models, data.test, known, tau_mode, tau_limit, 0);
  for (const auto& cam : missing) {
    MetricsAccumulator acc(cam, {tau_mode, RmseForm::root_mean, tau_limit, 0});
    for (const auto& s : data.test) {
      if (s.camera != cam) continue;
      const auto& t = s.target.depth;
      const auto rel = models.relative(s.image, cam);
      const auto cal = calibrate_scale_shift(rel.values(), t);
      std::vector<double> metric(rel.numel());
      for (std::size_t i = 0; i < metric.size(); ++i) metric[i] = std::max(cal.m * rel.at(i) + cal.b, kCalibratedFloor);
      acc.add(DepthMap::dense(t.height, t.width, std::move(metric), cam), rel.values(), t);
    }
    result.reports.push_back(acc.finish());
  }
  std::sort(result.reports.begin(), result.reports.end(),
            [](const MetricsReport& a, const MetricsReport& b) { return a.dataset < b.dataset; });
  result.aggregate = aggregate(result.reports);
  return result;
}

CrossEvalResult cross_eval(const VdeModel& model, const std::vector<PreparedSample>& samples, TauMode tau_mode,
                           std::size_t tau_limit, std::uint64_t seed) {
  CrossEvalResult r;
  for (const auto& [cam, _] : model.r2mcs) r.cameras.push_back(cam);
  const std::size_t k = r.cameras.size();
  r.tau.assign(k, std::vector<double>(k, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (const auto& s : samples) {
    auto col = std::find(r.cameras.begin(), r.cameras.end(), s.camera);
    if (col == r.cameras.end()) throw LookupError("cross-eval: checkpoint has no converter for camera '" + s.camera + "'");
    const std::size_t j = static_cast<std::size_t>(col - r.cameras.begin());
    const auto& t = s.target.depth;
    const auto relative = crde_forward(s.image, model.crde, model.config).relative;
    for (std::size_t i = 0; i < k; ++i) {
      const auto metric = metric_from_relative(model, relative, r.cameras[i], t.height, t.width);
      r.tau[i][j] += kendall_tau_map(metric.values(), t, tau_mode, tau_limit, seed + counts[j]).tau;
    }
    ++counts[j];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] == 0) throw DegenerateInputError("cross-eval: no samples for camera '" + r.cameras[j] + "'");
    for (std::size_t i = 0; i < k; ++i) r.tau[i][j] /= static_cast<double>(counts[j]);
  }
  for (const auto& row : r.tau) r.row_means.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(k));
  return r;
}

std::string cross_eval_csv(const CrossEvalResult& r) {
  std::ostringstream out;
  out.precision(17);
  out << "converter";
  for (const auto& c : r.cameras) out << ',' << c;
  out << ",mean\n";
  for (std::size_t i = 0; i < r.cameras.size(); ++i) {
    out << r.cameras[i];
    for (double v : r.tau[i]) out << ',' << v;
    out << ',' << r.row_means[i] << '\n';
  }
  return out.str();
}

Json cross_eval_json(const CrossEvalResult& r) {
  return Json{{"cameras", r.cameras}, {"tau", r.tau}, {"row_means", r.row_means}};
}

SuiteResult run_setting_suite(const ExperimentConfig& base, const PreparedData& data, const TrainOptions& options) {
  if (data.cameras.size() < 2) throw ConfigError("suite: needs at least two cameras");
  SuiteResult suite;
  for (auto s : {Setting::single_network, Setting::separate_networks, Setting::multiple_decoders, Setting::vde}) {
    auto cfg = base;
    cfg.setting = s;
    cfg.ablation.direct_metric = false;
    TrainOptions o = options;
    if (options.checkpoint_dir) o.checkpoint_dir = *options.checkpoint_dir / to_string(s);
    log_line(options, "setting " + to_string(s));
    suite.runs.emplace(s, run_experiment(cfg, data, o));
  }
  return suite;
}

std::string suite_csv(const SuiteResult& suite) {
  std::ostringstream out;
  out.precision(17);
  out << "setting,camera,metric,value\n";
  for (const auto& [s, r] : suite.runs) {
    const auto name = to_string(s);
    for (const auto& rep : r.evaluation.reports) {
      for (const auto& [metric, v] : rep.values) out << name << ',' << rep.dataset << ',' << metric << ',' << v << '\n';
    }
    for (const auto& [metric, v] : r.evaluation.aggregate.values) out << name << ",geomean," << metric << ',' << v << '\n';
    out << name << ",all,parameters," << r.parameters << '\n';
    out << name << ",all,iterations," << r.iterations << '\n';
  }
  return out.str();
}

Json suite_json(const SuiteResult& suite) {
  Json j = Json::object();
  for (const auto& [s, r] : suite.runs) j[to_string(s)] = run_report_json(r);
  return j;
}

std::vector<AblationCell> parse_grid(const Json& grid) {
  if (!grid.is_object() || !grid.contains("cells") || !grid.at("cells").is_array()) {
    throw ConfigError("grid: expected {\"cells\": [...]}");
  }
  auto coefficient = [](const Json& cell, const char* key) -> std::optional<double> {
    if (!cell.contains(key)) return std::nullopt;
    const auto& v = cell.at(key);
    if (v.is_null() || (v.is_string() && v.get<std::string>() == "learnable")) return std::nullopt;
    if (!v.is_number()) throw ConfigError(std::string("grid: ") + key + " must be a number, null or \"learnable\"");
    return v.get<double>();
  };
  std::vector<AblationCell> cells;
  bool has_learnable = false;
  for (const auto& c : grid.at("cells")) {
    if (!c.is_object()) throw ConfigError("grid: cells must be objects");
    for (const auto& [key, _] : c.items()) {
      if (key != "alpha" && key != "beta" && key != "gamma" && key != "no_anchor") {
        throw ConfigError("grid: unknown key '" + key + "'");
      }
    }
    AblationCell cell{coefficient(c, "alpha"), coefficient(c, "beta"), coefficient(c, "gamma"),
                      c.value("no_anchor", false)};
    has_learnable |= !cell.alpha && !cell.beta && !cell.gamma && !cell.no_anchor;
    cells.push_back(cell);
  }
  if (!has_learnable) cells.push_back({});
  return cells;
}

std::vector<CoefficientReadout> read_coefficients(const VdeModel& model) {
  std::vector<CoefficientReadout> out;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& mix = model.crde.fmms[i].layers[l].mix;
      out.push_back({"fmm" + std::to_string(i + 1) + ".mix" + std::to_string(l), mix.alpha.item(), mix.beta.item(),
                     mix.gamma.item()});
    }
  }
  return out;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<AblationCell>& cells,
                                      const PreparedData& data, const TrainOptions& options) {
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    auto cfg = base;
    cfg.setting = Setting::vde;
    cfg.ablation.direct_metric = false;
    cfg.ablation.fix_alpha = cell.alpha;
    cfg.ablation.fix_beta = cell.beta;
    cfg.ablation.fix_gamma = cell.gamma;
    cfg.ablation.no_anchor = cell.no_anchor;
    TrainedModels trained;
    TrainOptions o = options;
    o.checkpoint_dir.reset();
    auto report = run_experiment(cfg, data, o, &trained);
    rows.push_back({cell, std::move(report), read_coefficients(*trained.shared)});
  }
  return rows;
}

namespace {

std::string cell_value(const std::optional<double>& v) {
  if (!v) return "learnable";
  std::ostringstream s;
  s << *v;
  return s.str();
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "alpha,beta,gamma,no_anchor";
  for (const auto& m : metric_names()) out << ',' << m;
  out << '\n';
  for (const auto& r : rows) {
    out << cell_value(r.cell.alpha) << ',' << cell_value(r.cell.beta) << ',' << cell_value(r.cell.gamma) << ','
        << (r.cell.no_anchor ? "true" : "false");
    for (const auto& m : metric_names()) out << ',' << r.report.evaluation.aggregate.values.at(m);
    out << '\n';
  }
  return out.str();
}

Json ablation_json(const std::vector<AblationRow>& rows) {
  Json j = Json::array();
  for (const auto& r : rows) {
    Json coeffs = Json::array();
    for (const auto& c : r.coefficients) {
      coeffs.push_back({{"layer", c.layer}, {"alpha", c.alpha}, {"beta", c.beta}, {"gamma", c.gamma}});
    }
    j.push_back({{"alpha", cell_value(r.cell.alpha)},
                 {"beta", cell_value(r.cell.beta)},
                 {"gamma", cell_value(r.cell.gamma)},
                 {"no_anchor", r.cell.no_anchor},
                 {"report", run_report_json(r.report)},
                 {"coefficients", coeffs}});
  }
  return j;
}

}  // namespace vde
