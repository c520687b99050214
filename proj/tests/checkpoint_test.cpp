#include <gtest/gtest.h>

#include <bit>
#include <filesystem>

#include "test_util.hpp"
#include "vde/checkpoint.hpp"
#include "vde/config.hpp"
#include "vde/errors.hpp"
#include "vde/io.hpp"
#include "vde/optim.hpp"

using namespace vde;
namespace fs = std::filesystem;

namespace {

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

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "vde_checkpoint_test";
  fs::create_directories(dir);
  return dir / name;
}

void expect_same_params(const ParamList& a, const ParamList& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].name, b[i].name);
    ASSERT_EQ(a[i].tensor.shape(), b[i].tensor.shape()) << a[i].name;
    ASSERT_EQ(a[i].tensor.requires_grad(), b[i].tensor.requires_grad()) << a[i].name;
    for (std::size_t k = 0; k < a[i].tensor.numel(); ++k) {
      ASSERT_EQ(std::bit_cast<std::uint64_t>(a[i].tensor.at(k)), std::bit_cast<std::uint64_t>(b[i].tensor.at(k)))
          << a[i].name << "[" << k << "]";
    }
  }
}

void train_a_little(const ParamList& params, Rng& rng) {
  AdamW opt(params, {});
  for (int s = 0; s < 2; ++s) {
    for (const auto& p : params) {
      if (!p.tensor.requires_grad()) continue;
      auto g = Tensor(p.tensor).mutable_grad();
      for (auto& v : g) v = rng.normal();
    }
    opt.step(1e-2);
  }
}

}  // namespace

TEST(Checkpoint, VdeRoundTripIsBitExact) {
  Rng rng(1);
  auto cfg = tiny_config();
  cfg.mix = {0.3, 0.5, 0.7, false, true, true};  // 0.3 is not a float
  auto model = VdeModel::create(cfg, rng);
  add_camera(model, "near", rng);
  add_camera(model, "outdoor", rng);
  train_a_little(model.parameters(), rng);
  const auto path = temp_path("vde.ckpt");
  save_checkpoint(path, model);
  auto loaded = load_vde_checkpoint(path);
  EXPECT_EQ(loaded.r2mcs.size(), 2u);
  EXPECT_FALSE(loaded.direct_head.has_value());
  expect_same_params(model.parameters(), loaded.parameters());
  EXPECT_EQ(model_config_to_json(loaded.config), model_config_to_json(cfg));
  auto image = vde::testing::random_positive(rng, {3, 32, 32}, 0, 1, false);
  auto a = vde_forward(model, image, "near").metric;
  auto b = vde_forward(loaded, image, "near").metric;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(Checkpoint, DirectAndMultiDecoderRoundTrip) {
  Rng rng(2);
  auto direct = VdeModel::create_direct(tiny_config(), rng);
  train_a_little(direct.parameters(), rng);
  save_checkpoint(temp_path("direct.ckpt"), direct);
  auto d = load_vde_checkpoint(temp_path("direct.ckpt"));
  EXPECT_TRUE(d.direct_head.has_value());
  expect_same_params(direct.parameters(), d.parameters());

  auto multi = MultiDecoderModel::create(tiny_config(), {"a", "b"}, rng);
  train_a_little(multi.parameters(), rng);
  save_checkpoint(temp_path("multi.ckpt"), multi);
  auto any = load_checkpoint(temp_path("multi.ckpt"));
  ASSERT_TRUE(std::holds_alternative<MultiDecoderModel>(any));
  expect_same_params(multi.parameters(), std::get<MultiDecoderModel>(any).parameters());
  EXPECT_THROW(load_vde_checkpoint(temp_path("multi.ckpt")), LookupError);
}

TEST(Checkpoint, StoresFloatBlobsAfterMagicAndVersion) {
  Rng rng(3);
  auto model = VdeModel::create(tiny_config(), rng);
  save_checkpoint(temp_path("layout.ckpt"), model);
  const auto bytes = read_text_file(temp_path("layout.ckpt"));
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(0, 4), "VDE1");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  EXPECT_EQ(version, kCheckpointVersion);
  // learnable tensors are float-representable, so the blob region is close to
  // four bytes per element
  const auto n = count_elements(model.parameters());
  EXPECT_LT(bytes.size(), 4 * n + 64 * model.parameters().size() + 4096);
}

TEST(Checkpoint, CorruptFilesAreFormatErrors) {
  Rng rng(4);
  auto model = VdeModel::create(tiny_config(), rng);
  const auto path = temp_path("corrupt.ckpt");
  save_checkpoint(path, model);
  auto bytes = read_text_file(path);
  write_text_file(temp_path("truncated.ckpt"), bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(temp_path("truncated.ckpt")), FormatError);
  bytes[0] = 'X';
  write_text_file(temp_path("magic.ckpt"), bytes);
  EXPECT_THROW(load_checkpoint(temp_path("magic.ckpt")), FormatError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), IoError);
}

TEST(Config, ExperimentJsonRoundTrip) {
  ExperimentConfig c;
  c.setting = Setting::multiple_decoders;
  c.model_overrides = Json{{"window", 2}};
  c.optimizer.lr_start = 3e-3;
  c.iterations = 17;
  c.cameras = {"near", "far"};
  c.ablation.fix_beta = 0.25;
  c.ablation.no_anchor = true;
  c.ablation.tau_mode = TauMode::classical;
  c.ablation.crde_mode = CrdeLossMode::log;
  c.seed = 99;
  const auto j = experiment_to_json(c);
  const auto back = experiment_from_json(j);
  EXPECT_EQ(experiment_to_json(back), j);
  EXPECT_EQ(back.loss.crde_mode, CrdeLossMode::log);
  const auto m = back.model();
  EXPECT_EQ(m.window, 2u);
  EXPECT_EQ(m.mix.beta, 0.25);
  EXPECT_FALSE(m.mix.learn_beta);
  EXPECT_TRUE(m.mix.learn_alpha);
  EXPECT_TRUE(m.no_anchor);
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto other = c;
  other.seed = 100;
  EXPECT_NE(config_hash(other), config_hash(c));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(experiment_from_json(Json{{"settting", "vde"}}), ConfigError);
  EXPECT_THROW(experiment_from_json(Json{{"setting", "dual"}}), ConfigError);
  EXPECT_THROW(experiment_from_json(Json{{"preset", "huge"}}), ConfigError);
  EXPECT_THROW(experiment_from_json(Json{{"model", {{"encoder", {{"depth", 3}}}}}}), ConfigError);
  EXPECT_THROW(experiment_from_json(Json{{"optimizer", {{"batch", 0}}}}), ConfigError);
  EXPECT_THROW(experiment_from_json(Json{{"seed", "x"}}), ConfigError);
  EXPECT_THROW(load_experiment(temp_path("absent.json").string()), IoError);
  write_text_file(temp_path("broken.json"), "{");
  EXPECT_THROW(load_experiment(temp_path("broken.json").string()), ConfigError);
}

TEST(Optimizer, FirstStepMatchesClosedForm) {
  const double x0 = 0.75, g = -0.3, lr = 0.01, wd = 0.1;
  auto w = Tensor::full({1}, x0, true);
  auto b = Tensor::full({1}, x0, true);
  OptimizerConfig cfg;
  cfg.weight_decay = wd;
  AdamW opt({{"w", w, true}, {"b", b, false}}, cfg);
  w.mutable_grad()[0] = g;
  b.mutable_grad()[0] = g;
  opt.step(lr);
  // bias-corrected moments equal g and g^2 on the first step
  const double adam = lr * g / (std::abs(g) + cfg.epsilon);
  EXPECT_EQ(w.at(0), static_cast<double>(static_cast<float>(x0 - adam - lr * wd * x0)));
  EXPECT_EQ(b.at(0), static_cast<double>(static_cast<float>(x0 - adam)));
  EXPECT_TRUE(w.grad().empty());
}

TEST(Optimizer, SecondStepMatchesMomentRecurrence) {
  auto w = Tensor::full({1}, 1.0, true);
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({{"w", w, false}}, cfg);
  const double g1 = 0.5, g2 = -2.0, lr = 0.1;
  w.mutable_grad()[0] = g1;
  opt.step(lr);
  const double x1 = w.at(0);
  w.mutable_grad()[0] = g2;
  opt.step(lr);
  const double m = 0.1 * 0.9 * g1 + 0.1 * g2;
  const double v = 0.001 * 0.999 * g1 * g1 + 0.001 * g2 * g2;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_EQ(w.at(0), static_cast<double>(static_cast<float>(x1 - lr * mh / (std::sqrt(vh) + cfg.epsilon))));
}

TEST(Optimizer, UntouchedAndFrozenTensorsStayPut) {
  auto touched = Tensor::full({2}, 1.0, true);
  auto untouched = Tensor::full({2}, 1.0, true);
  auto frozen = Tensor::scalar(0.3, false);
  OptimizerConfig cfg;
  cfg.weight_decay = 0.5;
  AdamW opt({{"t", touched, true}, {"u", untouched, true}, {"f", frozen, false}}, cfg);
  sum(scale_by(touched, frozen)).backward();
  opt.step(0.1);
  EXPECT_NE(touched.at(0), 1.0);
  EXPECT_EQ(untouched.at(0), 1.0);
  EXPECT_EQ(untouched.at(1), 1.0);
  EXPECT_EQ(frozen.at(0), 0.3);
}

TEST(Optimizer, NonFiniteGradientThrowsBeforeUpdating) {
  auto a = Tensor::full({1}, 1.0, true);
  auto b = Tensor::full({1}, 1.0, true);
  AdamW opt({{"a", a, true}, {"b", b, true}}, {});
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = std::nan("");
  EXPECT_THROW(opt.step(0.1), NumericError);
  EXPECT_EQ(a.at(0), 1.0);
}

TEST(Optimizer, LinearScheduleEndpoints) {
  OptimizerConfig cfg;
  cfg.lr_start = 1e-3;
  cfg.lr_end = 1e-4;
  EXPECT_EQ(linear_lr(cfg, 0, 10), 1e-3);
  EXPECT_DOUBLE_EQ(linear_lr(cfg, 9, 10), 1e-4);
  EXPECT_DOUBLE_EQ(linear_lr(cfg, 3, 7), 1e-3 + (1e-4 - 1e-3) * 0.5);
  EXPECT_EQ(linear_lr(cfg, 0, 1), 1e-3);
}
