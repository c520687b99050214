#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vde/errors.hpp"
#include "vde/grad_check.hpp"
#include "vde/model.hpp"

using namespace vde;
using vde::testing::perturb;
using vde::testing::random_positive;
using vde::testing::random_tensor;
using vde::testing::tensors_of;

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

Tensor random_image(Rng& rng, std::size_t h, std::size_t w) {
  return random_positive(rng, {3, h, w}, 0.0, 1.0, false);
}

TrainTarget random_target(Rng& rng, const CameraId& camera, std::size_t h, std::size_t w) {
  std::vector<double> d(h * w);
  for (auto& v : d) v = rng.uniform(0.5, 5.0);
  auto depth = DepthMap::dense(h, w, std::move(d), camera);
  auto normalized = normalize(depth).map;
  return {camera, depth, normalized};
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.at(i)) != std::bit_cast<std::uint64_t>(b.at(i))) return false;
  }
  return true;
}

}  // namespace

TEST(Model, ToyShapes) {
  Rng rng(1);
  auto cfg = toy_config();
  auto model = VdeModel::create(cfg, rng);
  add_camera(model, "near", rng);
  auto image = random_image(rng, 64, 64);
  auto features = encoder_forward(image, model.crde.encoder, cfg);
  EXPECT_EQ(features.stages[0].shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(features.stages[3].shape(), (Shape{128, 2, 2}));
  EXPECT_EQ(pyramid_pool(features.stages[3], model.crde.pool).shape(), (Shape{128, 2, 2}));
  auto out = vde_forward(model, image, "near");
  EXPECT_EQ(out.relative.shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(out.normalized.shape(), (Shape{1, 64, 64}));
  EXPECT_EQ(out.metric.shape(), (Shape{1, 64, 64}));
  for (double v : out.metric.values()) EXPECT_GT(v, 0.0);
}

TEST(Model, TraceMatchesForward) {
  Rng rng(2);
  auto cfg = tiny_config();
  auto model = VdeModel::create(cfg, rng);
  add_camera(model, "a", rng);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {64, 96}, {40, 72}, {33, 31}}) {
    auto trace = trace_shapes(cfg, h, w);
    const std::size_t hp = (h + 31) / 32 * 32, wp = (w + 31) / 32 * 32;
    auto image = random_image(rng, h, w);
    Tensor padded = image;
    if (hp != h || wp != w) {
      std::vector<std::size_t> index(3 * hp * wp, kZeroIndex);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) index[(c * hp + y) * wp + x] = (c * h + y) * w + x;
      padded = gather(image, index, {3, hp, wp});
    }
    auto features = encoder_forward(padded, model.crde.encoder, cfg);
    for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(features.stages[s].shape(), trace.encoder[s]) << h << "x" << w;
    auto pooled = pyramid_pool(features.stages[3], model.crde.pool);
    EXPECT_EQ(pooled.shape(), trace.pooled);
    auto out = vde_forward(model, image, "a");
    EXPECT_EQ(out.relative.shape(), trace.relative);
    EXPECT_EQ(out.metric.shape(), trace.output);
    EXPECT_EQ(out.normalized.shape(), trace.output);
  }
}

TEST(Model, PaperShapeLadder) {
  auto trace = trace_shapes(paper_config(), 480, 640);
  EXPECT_EQ(trace.encoder[0], (Shape{128, 120, 160}));
  EXPECT_EQ(trace.encoder[3], (Shape{1024, 15, 20}));
  EXPECT_EQ(trace.pooled, (Shape{512, 15, 20}));
  EXPECT_EQ(trace.fmm[0], (Shape{256, 30, 40}));
  EXPECT_EQ(trace.fmm[1], (Shape{128, 60, 80}));
  EXPECT_EQ(trace.relative, (Shape{64, 120, 160}));
  EXPECT_EQ(trace.head_low, (Shape{1, 120, 160}));
  EXPECT_EQ(trace.output, (Shape{1, 480, 640}));
}

TEST(Model, PaperParameterCounts) {
  Rng rng(3);
  auto model = VdeModel::create(paper_config(), rng);
  add_camera(model, "cam", rng);
  auto counts = count_params(model);
  EXPECT_NEAR(static_cast<double>(counts.crde), 149.8e6, 0.02 * 149.8e6);
  EXPECT_NEAR(static_cast<double>(counts.r2mc.at("cam")), 1.7e6, 0.1 * 1.7e6);
}

TEST(Model, ConverterIsSmallAtToyScale) {
  Rng rng(4);
  auto model = VdeModel::create(toy_config(), rng);
  add_camera(model, "a", rng);
  auto counts = count_params(model);
  EXPECT_LT(static_cast<double>(counts.r2mc.at("a")), 0.05 * static_cast<double>(counts.total));
}

TEST(Model, AddCameraLeavesExistingOutputsBitIdentical) {
  Rng rng(5);
  auto cfg = tiny_config();
  auto model = VdeModel::create(cfg, rng);
  add_camera(model, "a", rng);
  auto image = random_image(rng, 32, 32);
  auto before = vde_forward(model, image, "a");
  const auto count_before = count_params(model);
  add_camera(model, "b", rng);
  auto after = vde_forward(model, image, "a");
  EXPECT_TRUE(bit_identical(before.metric, after.metric));
  EXPECT_TRUE(bit_identical(before.normalized, after.normalized));
  const auto count_after = count_params(model);
  EXPECT_EQ(count_after.total - count_before.total, count_after.r2mc.at("b"));
  EXPECT_EQ(count_after.r2mc.at("b"), R2mcParams::create(cfg.r2mc(), rng).count());
  EXPECT_THROW(add_camera(model, "a", rng), ConflictError);
}

TEST(Model, OtherCameraConvertersGetZeroGradient) {
  Rng rng(6);
  auto cfg = tiny_config();
  auto model = VdeModel::create(cfg, rng);
  for (const char* cam : {"a", "b", "c"}) add_camera(model, cam, rng);
  auto image = random_image(rng, 32, 32);
  auto target = random_target(rng, "b", 32, 32);
  auto loss = overall_loss(model, {&image}, {&target}, {});
  loss.backward();
  for (const auto& p : model.parameters()) {
    const bool foreign = p.name.rfind("r2mc.a", 0) == 0 || p.name.rfind("r2mc.c", 0) == 0;
    if (!foreign) continue;
    for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0) << p.name;
  }
  double own = 0.0;
  for (const auto& p : model.parameters()) {
    if (p.name.rfind("r2mc.b", 0) != 0) continue;
    for (double g : p.tensor.grad()) own += std::abs(g);
  }
  EXPECT_GT(own, 0.0);
}

TEST(Model, UnknownCameraThrows) {
  Rng rng(7);
  auto model = VdeModel::create(tiny_config(), rng);
  add_camera(model, "a", rng);
  auto image = random_image(rng, 32, 32);
  EXPECT_THROW(vde_forward(model, image, "z"), LookupError);
  EXPECT_THROW(direct_forward(model, image), LookupError);
}

TEST(Model, OverallLossIsSumOfSampleLosses) {
  Rng rng(8);
  auto model = VdeModel::create(tiny_config(), rng);
  add_camera(model, "a", rng);
  add_camera(model, "b", rng);
  auto i1 = random_image(rng, 32, 32), i2 = random_image(rng, 32, 32);
  auto t1 = random_target(rng, "a", 32, 32), t2 = random_target(rng, "b", 32, 32);
  LossConfig cfg;
  const double both = overall_loss(model, {&i1, &i2}, {&t1, &t2}, cfg).item();
  const double first = overall_loss(model, {&i1}, {&t1}, cfg).item();
  const double second = overall_loss(model, {&i2}, {&t2}, cfg).item();
  EXPECT_NEAR(both, first + second, 1e-12);
  auto out = vde_forward(model, i1, "a");
  const double parts = crde_sample_loss(out, t1, cfg).item() + silog_loss(out.metric, t1.depth, cfg).item();
  EXPECT_NEAR(first, parts, 1e-12);
  EXPECT_THROW(overall_loss(model, {&i1}, {&t1, &t2}, cfg), ShapeError);
}

TEST(Model, DirectAndMultiDecoderShapes) {
  Rng rng(9);
  auto cfg = tiny_config();
  auto direct = VdeModel::create_direct(cfg, rng);
  auto image = random_image(rng, 32, 64);
  auto d = direct_forward(direct, image);
  EXPECT_EQ(d.shape(), (Shape{1, 32, 64}));
  for (double v : d.values()) EXPECT_GT(v, 0.0);
  auto multi = MultiDecoderModel::create(cfg, {"a", "b"}, rng);
  auto m = multi_decoder_forward(multi, image, "b");
  EXPECT_EQ(m.shape(), (Shape{1, 32, 64}));
  EXPECT_THROW(multi_decoder_forward(multi, image, "c"), LookupError);
  EXPECT_THROW(MultiDecoderModel::create(cfg, {"a", "a"}, rng), ConflictError);
}

TEST(Model, ParameterTotalsOrderedAcrossSettings) {
  Rng rng(10);
  auto cfg = toy_config();
  const std::vector<CameraId> cams{"near", "far", "outdoor"};
  const auto single = count_params(VdeModel::create_direct(cfg, rng)).total;
  auto vde = VdeModel::create(cfg, rng);
  for (const auto& c : cams) add_camera(vde, c, rng);
  const auto multi = count_params(MultiDecoderModel::create(cfg, cams, rng));
  EXPECT_GT(3 * single, multi);
  EXPECT_GT(multi, count_params(vde).total);
}

TEST(Model, EndToEndGradientCheck) {
  auto cfg = tiny_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(100 + seed);
    auto model = VdeModel::create(cfg, rng);
    add_camera(model, "a", rng);
    auto params = model.parameters();
    perturb(params, rng, 0.2);
    auto image = random_image(rng, 32, 32);
    auto target = random_target(rng, "a", 32, 32);
    auto f = [&] { return overall_loss(model, {&image}, {&target}, {}); };
    EXPECT_LE(grad_check(f, tensors_of(params), 1e-5, 2).max_error, 1e-4) << "seed " << seed;
  }
}
