#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vde/depth.hpp"
#include "vde/rng.hpp"

namespace vde {

using Vec3 = std::array<double, 3>;

struct CameraProfile {
  CameraId id;
  double depth_min = 0.5, depth_max = 5.0;  // meters
  double noise_sigma = 0.0;                 // relative
  std::size_t height = 64, width = 64;
  bool invalid_beyond_range = true;
  /// Range of the global scene scale (meters per scene unit).
  double scale_min = 1.0, scale_max = 1.0;
};

/// Near-indoor [0.5, 5], far-indoor [0.5, 10] and outdoor [2, 40] sensors.
std::vector<CameraProfile> default_profiles();

/// n . p = offset, in scene units.
struct Plane {
  Vec3 normal;
  double offset = 1.0;
  Vec3 albedo{0.8, 0.8, 0.8};
  double checker = 0.0;  // checker cell size, 0 disables
};

struct Sphere {
  Vec3 center;
  double radius = 1.0;
  Vec3 albedo{0.8, 0.8, 0.8};
};

/// Pinhole camera at the origin looking along +z (y down). Geometry is in
/// scene units and multiplied by `scale` to give meters.
struct SceneSpec {
  std::vector<Plane> planes;
  std::vector<Sphere> spheres;
  double scale = 1.0;
  Vec3 light{0.3, 0.6, 1.0};  // direction the light travels
};

inline constexpr double kHorizontalFov = 1.0471975511965976;  // 60 degrees

/// Planar 3 x H x W image in [0, 1].
struct Image {
  std::size_t height = 0, width = 0;
  std::vector<double> data;
};

struct Rendering {
  Image rgb;
  std::vector<double> depth;  // meters along the optical axis, row-major
};

/// Scene-unit distance along the optical axis for a normalized image-plane
/// direction (u, v, 1), or +inf when nothing is hit.
double trace_depth(const SceneSpec& spec, double u, double v);
Rendering render_scene(const SceneSpec& spec, std::size_t height, std::size_t width);

/// Random scene: tilted back wall covering the view, a floor, and 1-4
/// spheres; scale drawn from the profile's range.
SceneSpec random_scene(Rng& rng, const CameraProfile& profile);

struct CameraCapture {
  DepthMap depth;
  bool degenerate = false;  // nothing valid
};

CameraCapture apply_camera(const std::vector<double>& true_depth, const CameraProfile& profile,
                           Rng& rng);

struct Sample {
  std::string scene_id;
  std::uint64_t scene_seed = 0;
  CameraId camera;
  std::string split;  // "train" or "test"
  Image rgb;
  DepthMap depth;
};

struct DatasetSpec {
  std::vector<CameraProfile> profiles;
  std::size_t train_scenes = 300;
  std::size_t test_scenes = 50;
  std::uint64_t seed = 0;
};

inline constexpr double kMinValidFraction = 0.3;

/// Balanced per-camera samples. RGB is quantized to 8 bits and depths to
/// 32-bit floats so in-memory samples equal their files.
std::vector<Sample> generate_dataset(const DatasetSpec& spec);

}  // namespace vde
