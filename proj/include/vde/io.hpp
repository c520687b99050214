#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vde/depth.hpp"
#include "vde/synth.hpp"

namespace vde {

namespace fs = std::filesystem;

/// ".dmb": "DMB1", u32 H, u32 W, H*W little-endian f32 (NaN = invalid), then a
/// u32-length-prefixed camera id.
void write_depth_dmb(const fs::path& path, const DepthMap& depth);
DepthMap read_depth_dmb(const fs::path& path);

/// 16-bit grayscale PNG, 0 = invalid, plus a JSON sidecar next to it (same
/// stem, ".json") holding {scale_meters_per_unit, camera_id}.
void write_depth_png(const fs::path& path, const DepthMap& depth, double scale_meters_per_unit);
DepthMap read_depth_png(const fs::path& path);

/// Dispatches on the extension (".dmb" or ".png").
void write_depth(const fs::path& path, const DepthMap& depth, double png_scale = 1e-3);
DepthMap read_depth(const fs::path& path);

fs::path depth_sidecar_path(const fs::path& png_path);

/// 8-bit RGB PNG from / to a planar image in [0, 1].
void write_rgb_png(const fs::path& path, const Image& image);
Image read_rgb_png(const fs::path& path);

struct ManifestEntry {
  std::string scene_id;
  CameraId camera;
  std::string rgb_path;    // relative to the manifest's directory
  std::string depth_path;
  std::string split;
};

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const fs::path& path);

/// Writes rgb/, depth/, manifest.csv, train.csv and test.csv under `dir`.
void write_dataset(const fs::path& dir, const std::vector<Sample>& samples);
/// Loads every sample of a manifest; paths resolve against its directory.
std::vector<Sample> load_manifest_samples(const fs::path& manifest);

std::string read_text_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);

}  // namespace vde
