#include "vde/synth.hpp"

#include <cmath>
#include <limits>

namespace vde {

std::vector<CameraProfile> default_profiles() {
  return {{"near", 0.5, 5.0, 0.01, 64, 64, true, 0.6, 0.85},
          {"far", 0.5, 10.0, 0.01, 64, 64, true, 1.2, 1.7},
          {"outdoor", 2.0, 40.0, 0.01, 64, 64, true, 4.5, 6.5}};
}

namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Hit {
  double t = kInf;
  Vec3 normal{0, 0, -1};
  Vec3 albedo{0, 0, 0};
};

double plane_hit(const Plane& p, const Vec3& d) {
  const double denom = dot(p.normal, d);
  if (denom == 0.0) return kInf;
  const double t = p.offset / denom;
  return t > 0.0 ? t : kInf;
}

double sphere_hit(const Sphere& s, const Vec3& d) {
  // |t d - c|^2 = r^2
  const double a = dot(d, d), b = -2.0 * dot(d, s.center), c = dot(s.center, s.center) - s.radius * s.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return kInf;
  const double root = std::sqrt(disc);
  const double t0 = (-b - root) / (2.0 * a), t1 = (-b + root) / (2.0 * a);
  if (t0 > 0.0) return t0;
  return t1 > 0.0 ? t1 : kInf;
}

Hit nearest(const SceneSpec& spec, const Vec3& d) {
  Hit h;
  for (const auto& p : spec.planes) {
    const double t = plane_hit(p, d);
    if (t < h.t) {
      h.t = t;
      h.normal = p.normal;
      h.albedo = p.albedo;
      if (p.checker > 0.0) {
        const Vec3 x{t * d[0], t * d[1], t * d[2]};
        const long cell = static_cast<long>(std::floor(x[0] / p.checker)) +
                          static_cast<long>(std::floor(x[1] / p.checker)) +
                          static_cast<long>(std::floor(x[2] / p.checker));
        if (cell % 2 != 0) h.albedo = {0.7 * p.albedo[0], 0.7 * p.albedo[1], 0.7 * p.albedo[2]};
      }
    }
  }
  for (const auto& s : spec.spheres) {
    const double t = sphere_hit(s, d);
    if (t < h.t) {
      h.t = t;
      h.normal = {t * d[0] - s.center[0], t * d[1] - s.center[1], t * d[2] - s.center[2]};
      h.albedo = s.albedo;
    }
  }
  h.normal = normalized(h.normal);
  if (dot(h.normal, d) > 0.0) h.normal = {-h.normal[0], -h.normal[1], -h.normal[2]};
  return h;
}

double focal_scale(std::size_t width) { return (static_cast<double>(width) / 2.0) / std::tan(kHorizontalFov / 2.0); }

}  // namespace

double trace_depth(const SceneSpec& spec, double u, double v) { return nearest(spec, {u, v, 1.0}).t; }

Rendering render_scene(const SceneSpec& spec, std::size_t height, std::size_t width) {
  Rendering r;
  r.rgb = {height, width, std::vector<double>(3 * height * width, 0.0)};
  r.depth.assign(height * width, kInf);
  const double f = focal_scale(width);
  const Vec3 light = normalized(spec.light);
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const double u = (static_cast<double>(j) + 0.5 - static_cast<double>(width) / 2.0) / f;
      const double v = (static_cast<double>(i) + 0.5 - static_cast<double>(height) / 2.0) / f;
      const Hit h = nearest(spec, {u, v, 1.0});
      const std::size_t px = i * width + j;
      if (!std::isfinite(h.t)) continue;
      r.depth[px] = spec.scale * h.t;
      const double shade = 0.25 + 0.75 * std::max(0.0, -dot(h.normal, light));
      const double fog = std::exp(-0.12 * h.t);
      for (std::size_t c = 0; c < 3; ++c) {
        r.rgb.data[c * plane + px] = std::clamp(h.albedo[c] * shade * fog, 0.0, 1.0);
      }
    }
  }
  return r;
}

SceneSpec random_scene(Rng& rng, const CameraProfile& profile) {
  auto albedo = [&] { return Vec3{rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)}; };
  SceneSpec s;
  s.scale = rng.uniform(profile.scale_min, profile.scale_max);
  s.light = {rng.uniform(-0.6, 0.6), rng.uniform(0.2, 0.9), 1.0};
  // back wall: tilt kept small so every viewing ray hits it
  s.planes.push_back({{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 1.0}, rng.uniform(3.5, 6.0), albedo(),
                      rng.uniform(0.4, 1.2)});
  s.planes.push_back({{0.0, -1.0, 0.0}, -rng.uniform(0.7, 1.3), albedo(), rng.uniform(0.3, 0.8)});
  const std::size_t spheres = 1 + rng.below(4);
  for (std::size_t k = 0; k < spheres; ++k) {
    const double z = rng.uniform(1.8, 4.0);
    s.spheres.push_back({{rng.uniform(-0.45, 0.45) * z, rng.uniform(-0.3, 0.3) * z, z}, rng.uniform(0.25, 0.8), albedo()});
  }
  return s;
}

CameraCapture apply_camera(const std::vector<double>& true_depth, const CameraProfile& profile,
                           Rng& rng) {
  if (!(profile.depth_min > 0.0 && profile.depth_min < profile.depth_max)) {
    throw ConfigError("camera " + profile.id + ": invalid depth range");
  }
  if (true_depth.size() != profile.height * profile.width) {
    throw ShapeError("apply_camera: " + std::to_string(true_depth.size()) + " depths for a " +
                     std::to_string(profile.height) + "x" + std::to_string(profile.width) + " camera");
  }
  CameraCapture out;
  auto& d = out.depth;
  d.height = profile.height;
  d.width = profile.width;
  d.camera = profile.id;
  d.depths.assign(true_depth.size(), 0.0);
  d.valid.assign(true_depth.size(), 0);
  for (std::size_t i = 0; i < true_depth.size(); ++i) {
    double z = true_depth[i];
    if (!std::isfinite(z)) continue;
    if (z < profile.depth_min || z > profile.depth_max) {
      if (profile.invalid_beyond_range) continue;
      z = std::clamp(z, profile.depth_min, profile.depth_max);
    }
    if (profile.noise_sigma > 0.0) z *= std::max(1.0 + rng.normal(0.0, profile.noise_sigma), 0.05);
    d.depths[i] = z;
    d.valid[i] = 1;
  }
  out.degenerate = d.valid_count() == 0;
  return out;
}

namespace {

void quantize(Sample& s) {
  for (auto& v : s.rgb.data) v = std::round(v * 255.0) / 255.0;
  for (std::size_t i = 0; i < s.depth.size(); ++i) {
    s.depth.depths[i] = s.depth.valid[i] ? static_cast<double>(static_cast<float>(s.depth.depths[i])) : 0.0;
  }
}

}  // namespace

std::vector<Sample> generate_dataset(const DatasetSpec& spec) {
  if (spec.profiles.empty()) throw ConfigError("generate_dataset: no camera profiles");
  const Rng base = Rng(spec.seed).split("scenes");
  std::vector<Sample> out;
  std::uint64_t counter = 0;
  for (const auto& profile : spec.profiles) {
    for (const char* split : {"train", "test"}) {
      const std::size_t count = std::string(split) == "train" ? spec.train_scenes : spec.test_scenes;
      for (std::size_t k = 0; k < count; ++k, ++counter) {
        for (std::uint64_t attempt = 0;; ++attempt) {
          Rng rng = base.split(counter).split(attempt);
          const auto scene = random_scene(rng, profile);
          auto rendering = render_scene(scene, profile.height, profile.width);
          auto capture = apply_camera(rendering.depth, profile, rng);
          const double valid = static_cast<double>(capture.depth.valid_count()) /
                               static_cast<double>(capture.depth.size());
          if (capture.degenerate || valid < kMinValidFraction) continue;
          Sample s;
          s.scene_id = profile.id + "-" + split + "-" + std::to_string(k);
          s.scene_seed = rng.seed();
          s.camera = profile.id;
          s.split = split;
          s.rgb = std::move(rendering.rgb);
          s.depth = std::move(capture.depth);
          quantize(s);
          out.push_back(std::move(s));
          break;
        }
      }
    }
  }
  return out;
}

}  // namespace vde
