#include "vde/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace vde {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

void put_u32(std::string& buf, std::uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }

struct Reader {
  const std::string& bytes;
  std::size_t offset = 0;
  std::string name;

  void need(std::size_t n) const {
    if (offset + n > bytes.size()) {
      throw FormatError(name + ": truncated at byte " + std::to_string(bytes.size()) + ", needed " +
                        std::to_string(offset + n));
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + offset, 4);
    offset += 4;
    return v;
  }
  float f32() {
    need(4);
    float v;
    std::memcpy(&v, bytes.data() + offset, 4);
    offset += 4;
    return v;
  }
};

}  // namespace

void write_depth_dmb(const fs::path& path, const DepthMap& depth) {
  std::string buf = "DMB1";
  put_u32(buf, static_cast<std::uint32_t>(depth.height));
  put_u32(buf, static_cast<std::uint32_t>(depth.width));
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const float v = depth.valid[i] ? static_cast<float>(depth.depths[i]) : std::numeric_limits<float>::quiet_NaN();
    buf.append(reinterpret_cast<const char*>(&v), 4);
  }
  put_u32(buf, static_cast<std::uint32_t>(depth.camera.size()));
  buf += depth.camera;
  write_text_file(path, buf);
}

DepthMap read_depth_dmb(const fs::path& path) {
  const std::string bytes = read_text_file(path);
  Reader r{bytes, 0, path.string()};
  r.need(4);
  if (bytes.compare(0, 4, "DMB1") != 0) throw FormatError(path.string() + ": bad magic at byte 0");
  r.offset = 4;
  DepthMap d;
  d.height = r.u32();
  d.width = r.u32();
  r.need(4 * d.height * d.width);
  d.depths.resize(d.size());
  d.valid.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const float v = r.f32();
    d.valid[i] = !std::isnan(v);
    d.depths[i] = d.valid[i] ? static_cast<double>(v) : 0.0;
  }
  const std::uint32_t len = r.u32();
  r.need(len);
  d.camera = bytes.substr(r.offset, len);
  r.offset += len;
  if (r.offset != bytes.size()) {
    throw FormatError(path.string() + ": trailing data at byte " + std::to_string(r.offset));
  }
  return d;
}

fs::path depth_sidecar_path(const fs::path& png_path) {
  fs::path p = png_path;
  return p.replace_extension(".json");
}

namespace {

// libpng's simplified API; errors surface through the image's message.
void write_png(const fs::path& path, std::uint32_t format, std::size_t height, std::size_t width,
               const void* buffer) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer, 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
}

template <typename T>
std::vector<T> read_png(const fs::path& path, std::uint32_t format, std::size_t& height, std::size_t& width) {
  if (!fs::exists(path)) throw IoError("cannot open " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw FormatError(path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<T> buffer(PNG_IMAGE_SIZE(image) / sizeof(T));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError(path.string() + ": " + image.message);
  }
  height = image.height;
  width = image.width;
  return buffer;
}

}  // namespace

void write_depth_png(const fs::path& path, const DepthMap& depth, double scale) {
  if (!(scale > 0.0)) throw ConfigError("write_depth_png: scale must be positive");
  std::vector<std::uint16_t> raw(depth.size(), 0);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!depth.valid[i]) continue;
    raw[i] = static_cast<std::uint16_t>(std::clamp(std::round(depth.depths[i] / scale), 1.0, 65535.0));
  }
  write_png(path, PNG_FORMAT_LINEAR_Y, depth.height, depth.width, raw.data());
  nlohmann::ordered_json side{{"scale_meters_per_unit", scale}, {"camera_id", depth.camera}};
  write_text_file(depth_sidecar_path(path), side.dump(2) + "\n");
}

DepthMap read_depth_png(const fs::path& path) {
  const auto side_path = depth_sidecar_path(path);
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_text_file(side_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side_path.string() + ": " + e.what());
  }
  if (!side.contains("scale_meters_per_unit") || !side["scale_meters_per_unit"].is_number()) {
    throw FormatError(side_path.string() + ": missing scale_meters_per_unit");
  }
  const double scale = side["scale_meters_per_unit"].get<double>();
  DepthMap d;
  auto raw = read_png<std::uint16_t>(path, PNG_FORMAT_LINEAR_Y, d.height, d.width);
  d.camera = side.value("camera_id", std::string());
  d.depths.resize(d.size());
  d.valid.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    d.valid[i] = raw[i] != 0;
    d.depths[i] = raw[i] * scale;
  }
  return d;
}

void write_depth(const fs::path& path, const DepthMap& depth, double png_scale) {
  if (path.extension() == ".dmb") return write_depth_dmb(path, depth);
  if (path.extension() == ".png") return write_depth_png(path, depth, png_scale);
  throw ConfigError("unsupported depth extension: " + path.string());
}

DepthMap read_depth(const fs::path& path) {
  if (path.extension() == ".dmb") return read_depth_dmb(path);
  if (path.extension() == ".png") return read_depth_png(path);
  throw ConfigError("unsupported depth extension: " + path.string());
}

void write_rgb_png(const fs::path& path, const Image& image) {
  const std::size_t plane = image.height * image.width;
  std::vector<std::uint8_t> raw(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      raw[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data[c * plane + i], 0.0, 1.0) * 255.0));
    }
  }
  write_png(path, PNG_FORMAT_RGB, image.height, image.width, raw.data());
}

Image read_rgb_png(const fs::path& path) {
  Image img;
  auto raw = read_png<std::uint8_t>(path, PNG_FORMAT_RGB, img.height, img.width);
  const std::size_t plane = img.height * img.width;
  img.data.resize(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.data[c * plane + i] = raw[3 * i + c] / 255.0;
  }
  return img;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::string text = "scene_id,camera_id,rgb_path,depth_path,split\n";
  for (const auto& e : entries) {
    for (const auto* field : {&e.scene_id, &e.camera, &e.rgb_path, &e.depth_path, &e.split}) {
      if (field->find_first_of(",\n\"") != std::string::npos) {
        throw ConfigError("manifest field contains a separator: " + *field);
      }
    }
    text += e.scene_id + "," + e.camera + "," + e.rgb_path + "," + e.depth_path + "," + e.split + "\n";
  }
  write_text_file(path, text);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "scene_id,camera_id,rgb_path,depth_path,split") {
    throw FormatError(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<ManifestEntry> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw FormatError(path.string() + ": row " + std::to_string(row) + " has " +
                                         std::to_string(f.size()) + " fields");
    out.push_back({f[0], f[1], f[2], f[3], f[4]});
  }
  return out;
}

void write_dataset(const fs::path& dir, const std::vector<Sample>& samples) {
  std::vector<ManifestEntry> all, train, test;
  for (const auto& s : samples) {
    ManifestEntry e{s.scene_id, s.camera, "rgb/" + s.scene_id + ".png", "depth/" + s.scene_id + ".dmb", s.split};
    write_rgb_png(dir / e.rgb_path, s.rgb);
    write_depth_dmb(dir / e.depth_path, s.depth);
    all.push_back(e);
    (s.split == "train" ? train : test).push_back(e);
  }
  write_manifest(dir / "manifest.csv", all);
  write_manifest(dir / "train.csv", train);
  write_manifest(dir / "test.csv", test);
}

std::vector<Sample> load_manifest_samples(const fs::path& manifest) {
  const fs::path base = manifest.parent_path();
  std::vector<Sample> out;
  for (const auto& e : read_manifest(manifest)) {
    Sample s;
    s.scene_id = e.scene_id;
    s.camera = e.camera;
    s.split = e.split;
    s.rgb = read_rgb_png(base / e.rgb_path);
    s.depth = read_depth(base / e.depth_path);
    if (s.depth.camera.empty()) s.depth.camera = e.camera;
    if (s.rgb.height != s.depth.height || s.rgb.width != s.depth.width) {
      throw FormatError(e.scene_id + ": rgb and depth sizes differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vde
