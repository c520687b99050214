#include "vde/config.hpp"

#include <set>

#include "vde/errors.hpp"
#include "vde/io.hpp"

namespace vde {

namespace {

template <typename E>
struct EnumNames;

template <>
struct EnumNames<Setting> {
  static constexpr std::array<std::pair<Setting, const char*>, 4> items{{{Setting::single_network, "single_network"},
                                                                         {Setting::separate_networks, "separate_networks"},
                                                                         {Setting::multiple_decoders, "multiple_decoders"},
                                                                         {Setting::vde, "vde"}}};
};
template <>
struct EnumNames<ScaleMode> {
  static constexpr std::array<std::pair<ScaleMode, const char*>, 2> items{
      {{ScaleMode::head_dim, "head_dim"}, {ScaleMode::token_count, "token_count"}}};
};
template <>
struct EnumNames<CrdeLossMode> {
  static constexpr std::array<std::pair<CrdeLossMode, const char*>, 2> items{
      {{CrdeLossMode::linear, "linear"}, {CrdeLossMode::log, "log"}}};
};
template <>
struct EnumNames<TauMode> {
  static constexpr std::array<std::pair<TauMode, const char*>, 2> items{
      {{TauMode::paper, "paper"}, {TauMode::classical, "classical"}}};
};

template <typename E>
std::string name_of(E e) {
  for (const auto& [v, n] : EnumNames<E>::items) {
    if (v == e) return n;
  }
  return "?";
}

template <typename E>
E parse_enum(const std::string& s, const char* what) {
  for (const auto& [v, n] : EnumNames<E>::items) {
    if (s == n) return v;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

std::string to_string(Setting s) { return name_of(s); }
std::string to_string(ScaleMode m) { return name_of(m); }
std::string to_string(CrdeLossMode m) { return name_of(m); }
std::string to_string(TauMode m) { return name_of(m); }
Setting parse_setting(const std::string& s) { return parse_enum<Setting>(s, "setting"); }
ScaleMode parse_scale_mode(const std::string& s) { return parse_enum<ScaleMode>(s, "scale mode"); }
CrdeLossMode parse_crde_mode(const std::string& s) { return parse_enum<CrdeLossMode>(s, "crde loss mode"); }
TauMode parse_tau_mode(const std::string& s) { return parse_enum<TauMode>(s, "tau mode"); }

Json model_config_to_json(const ModelConfig& c) {
  Json mix{{"alpha", c.mix.alpha},           {"beta", c.mix.beta},
           {"gamma", c.mix.gamma},           {"learn_alpha", c.mix.learn_alpha},
           {"learn_beta", c.mix.learn_beta}, {"learn_gamma", c.mix.learn_gamma}};
  return Json{{"encoder",
               {{"patch", c.encoder.patch},
                {"widths", c.encoder.widths},
                {"blocks", c.encoder.blocks},
                {"heads", c.encoder.heads}}},
              {"decoder",
               {{"width", c.decoder.width},
                {"bins", c.decoder.bins},
                {"widths", c.decoder.widths},
                {"hidden", c.decoder.hidden},
                {"heads", c.decoder.heads},
                {"head_heads", c.decoder.head_heads}}},
              {"window", c.window},
              {"mix", mix},
              {"r2mc_width", c.r2mc_width},
              {"r2mc_heads", c.r2mc_heads},
              {"no_anchor", c.no_anchor},
              {"scale_mode", to_string(c.scale_mode)}};
}

ModelConfig model_config_from_json(const Json& j, ModelConfig c) {
  const std::string w = "model";
  check_keys(j, {"encoder", "decoder", "window", "mix", "r2mc_width", "r2mc_heads", "no_anchor", "scale_mode"}, w);
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    check_keys(e, {"patch", "widths", "blocks", "heads"}, w + ".encoder");
    read(e, "patch", c.encoder.patch, w + ".encoder");
    read(e, "widths", c.encoder.widths, w + ".encoder");
    read(e, "blocks", c.encoder.blocks, w + ".encoder");
    read(e, "heads", c.encoder.heads, w + ".encoder");
  }
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    check_keys(d, {"width", "bins", "widths", "hidden", "heads", "head_heads"}, w + ".decoder");
    read(d, "width", c.decoder.width, w + ".decoder");
    read(d, "bins", c.decoder.bins, w + ".decoder");
    read(d, "widths", c.decoder.widths, w + ".decoder");
    read(d, "hidden", c.decoder.hidden, w + ".decoder");
    read(d, "heads", c.decoder.heads, w + ".decoder");
    read(d, "head_heads", c.decoder.head_heads, w + ".decoder");
  }
  if (j.contains("mix")) {
    const auto& m = j.at("mix");
    check_keys(m, {"alpha", "beta", "gamma", "learn_alpha", "learn_beta", "learn_gamma"}, w + ".mix");
    read(m, "alpha", c.mix.alpha, w + ".mix");
    read(m, "beta", c.mix.beta, w + ".mix");
    read(m, "gamma", c.mix.gamma, w + ".mix");
    read(m, "learn_alpha", c.mix.learn_alpha, w + ".mix");
    read(m, "learn_beta", c.mix.learn_beta, w + ".mix");
    read(m, "learn_gamma", c.mix.learn_gamma, w + ".mix");
  }
  read(j, "window", c.window, w);
  read(j, "r2mc_width", c.r2mc_width, w);
  read(j, "r2mc_heads", c.r2mc_heads, w);
  read(j, "no_anchor", c.no_anchor, w);
  if (j.contains("scale_mode")) c.scale_mode = parse_scale_mode(j.at("scale_mode").get<std::string>());
  if (c.window == 0 || c.encoder.patch == 0) throw ConfigError("model: window and patch must be positive");
  return c;
}

ModelConfig preset_config(const std::string& name) {
  if (name == "toy") return toy_config();
  if (name == "paper") return paper_config();
  throw ConfigError("unknown model preset '" + name + "'");
}

ModelConfig ExperimentConfig::model() const {
  auto c = model_config_from_json(model_overrides, preset_config(preset));
  if (ablation.fix_alpha) c.mix.alpha = *ablation.fix_alpha, c.mix.learn_alpha = false;
  if (ablation.fix_beta) c.mix.beta = *ablation.fix_beta, c.mix.learn_beta = false;
  if (ablation.fix_gamma) c.mix.gamma = *ablation.fix_gamma, c.mix.learn_gamma = false;
  if (ablation.no_anchor) c.no_anchor = true;
  c.scale_mode = ablation.scale_mode;
  return c;
}

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

void read_optional(const Json& j, const char* key, std::optional<double>& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  double v = 0.0;
  read(j, key, v, where);
  out = v;
}

}  // namespace

Json experiment_to_json(const ExperimentConfig& c) {
  const auto& o = c.optimizer;
  const auto& a = c.ablation;
  return Json{{"setting", to_string(c.setting)},
              {"preset", c.preset},
              {"model", c.model_overrides},
              {"optimizer",
               {{"lr_start", o.lr_start},
                {"lr_end", o.lr_end},
                {"weight_decay", o.weight_decay},
                {"batch", o.batch},
                {"beta1", o.beta1},
                {"beta2", o.beta2},
                {"epsilon", o.epsilon}}},
              {"step1_epochs", c.step1_epochs},
              {"step2_epochs", c.step2_epochs},
              {"iterations", c.iterations ? Json(*c.iterations) : Json(nullptr)},
              {"train_manifest", c.train_manifest},
              {"test_manifest", c.test_manifest},
              {"cameras", c.cameras},
              {"ablation",
               {{"fix_alpha", optional_json(a.fix_alpha)},
                {"fix_beta", optional_json(a.fix_beta)},
                {"fix_gamma", optional_json(a.fix_gamma)},
                {"no_anchor", a.no_anchor},
                {"direct_metric", a.direct_metric},
                {"crde_loss_mode", to_string(a.crde_mode)},
                {"tau_mode", to_string(a.tau_mode)},
                {"scale_mode", to_string(a.scale_mode)}}},
              {"loss", {{"alpha", c.loss.alpha}, {"lambda", c.loss.lambda}}},
              {"tau_limit", c.tau_limit},
              {"seed", c.seed}};
}

ExperimentConfig experiment_from_json(const Json& j) {
  const std::string w = "config";
  check_keys(j, {"setting", "preset", "model", "optimizer", "step1_epochs", "step2_epochs", "iterations",
                 "train_manifest", "test_manifest", "cameras", "ablation", "loss", "tau_limit", "seed"},
             w);
  ExperimentConfig c;
  if (j.contains("setting")) c.setting = parse_setting(j.at("setting").get<std::string>());
  read(j, "preset", c.preset, w);
  if (j.contains("model")) c.model_overrides = j.at("model");
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    const std::string ow = w + ".optimizer";
    check_keys(o, {"lr_start", "lr_end", "weight_decay", "batch", "beta1", "beta2", "epsilon"}, ow);
    read(o, "lr_start", c.optimizer.lr_start, ow);
    read(o, "lr_end", c.optimizer.lr_end, ow);
    read(o, "weight_decay", c.optimizer.weight_decay, ow);
    read(o, "batch", c.optimizer.batch, ow);
    read(o, "beta1", c.optimizer.beta1, ow);
    read(o, "beta2", c.optimizer.beta2, ow);
    read(o, "epsilon", c.optimizer.epsilon, ow);
  }
  read(j, "step1_epochs", c.step1_epochs, w);
  read(j, "step2_epochs", c.step2_epochs, w);
  if (j.contains("iterations") && !j.at("iterations").is_null()) {
    std::size_t n = 0;
    read(j, "iterations", n, w);
    c.iterations = n;
  }
  read(j, "train_manifest", c.train_manifest, w);
  read(j, "test_manifest", c.test_manifest, w);
  read(j, "cameras", c.cameras, w);
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    const std::string aw = w + ".ablation";
    check_keys(a, {"fix_alpha", "fix_beta", "fix_gamma", "no_anchor", "direct_metric", "crde_loss_mode", "tau_mode",
                   "scale_mode"},
               aw);
    read_optional(a, "fix_alpha", c.ablation.fix_alpha, aw);
    read_optional(a, "fix_beta", c.ablation.fix_beta, aw);
    read_optional(a, "fix_gamma", c.ablation.fix_gamma, aw);
    read(a, "no_anchor", c.ablation.no_anchor, aw);
    read(a, "direct_metric", c.ablation.direct_metric, aw);
    if (a.contains("crde_loss_mode")) c.ablation.crde_mode = parse_crde_mode(a.at("crde_loss_mode").get<std::string>());
    if (a.contains("tau_mode")) c.ablation.tau_mode = parse_tau_mode(a.at("tau_mode").get<std::string>());
    if (a.contains("scale_mode")) c.ablation.scale_mode = parse_scale_mode(a.at("scale_mode").get<std::string>());
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    check_keys(l, {"alpha", "lambda"}, w + ".loss");
    read(l, "alpha", c.loss.alpha, w + ".loss");
    read(l, "lambda", c.loss.lambda, w + ".loss");
  }
  c.loss.crde_mode = c.ablation.crde_mode;
  read(j, "tau_limit", c.tau_limit, w);
  read(j, "seed", c.seed, w);
  if (c.optimizer.batch == 0) throw ConfigError("config.optimizer.batch must be positive");
  if (c.step1_epochs < 0.0 || c.step2_epochs < 0.0) throw ConfigError("config: epochs must be non-negative");
  c.model();  // validates preset and overrides
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::vector<CameraProfile> profiles_from_json(const Json& j) {
  const Json& list = j.is_object() && j.contains("profiles") ? j.at("profiles") : j;
  if (!list.is_array() || list.empty()) throw ConfigError("profiles: expected a non-empty array");
  std::vector<CameraProfile> out;
  std::set<CameraId> ids;
  for (const auto& p : list) {
    const std::string w = "profiles";
    check_keys(p, {"id", "depth_min", "depth_max", "noise_sigma", "height", "width", "invalid_beyond_range", "scale_min",
                   "scale_max"},
               w);
    CameraProfile c;
    read(p, "id", c.id, w);
    read(p, "depth_min", c.depth_min, w);
    read(p, "depth_max", c.depth_max, w);
    read(p, "noise_sigma", c.noise_sigma, w);
    read(p, "height", c.height, w);
    read(p, "width", c.width, w);
    read(p, "invalid_beyond_range", c.invalid_beyond_range, w);
    read(p, "scale_min", c.scale_min, w);
    read(p, "scale_max", c.scale_max, w);
    if (c.id.empty()) throw ConfigError("profiles: every profile needs an id");
    if (!ids.insert(c.id).second) throw ConfigError("profiles: duplicate id '" + c.id + "'");
    if (!(c.depth_min > 0.0 && c.depth_max > c.depth_min)) throw ConfigError("profiles." + c.id + ": bad depth range");
    if (!(c.scale_min > 0.0 && c.scale_max >= c.scale_min)) throw ConfigError("profiles." + c.id + ": bad scale range");
    if (c.noise_sigma < 0.0 || c.height == 0 || c.width == 0) throw ConfigError("profiles." + c.id + ": bad noise or size");
    out.push_back(c);
  }
  return out;
}

Json profiles_to_json(const std::vector<CameraProfile>& profiles) {
  Json out = Json::array();
  for (const auto& c : profiles) {
    out.push_back({{"id", c.id},
                   {"depth_min", c.depth_min},
                   {"depth_max", c.depth_max},
                   {"noise_sigma", c.noise_sigma},
                   {"height", c.height},
                   {"width", c.width},
                   {"invalid_beyond_range", c.invalid_beyond_range},
                   {"scale_min", c.scale_min},
                   {"scale_max", c.scale_max}});
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = experiment_to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace vde
