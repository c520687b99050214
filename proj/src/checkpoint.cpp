#include "vde/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "vde/config.hpp"
#include "vde/errors.hpp"
#include "vde/io.hpp"

namespace vde {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'V', 'D', 'E', '1'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  const char* at(std::size_t offset) const { return data_.data() + offset; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) + ", needed " + std::to_string(n));
    }
  }
  std::string data_;
  std::size_t pos_ = 0;
};

bool fits_float(std::span<const double> values) {
  for (double v : values) {
    if (static_cast<double>(static_cast<float>(v)) != v && !std::isnan(v)) return false;
  }
  return true;
}

void write_file(const std::filesystem::path& path, const Json& header, const ParamList& params) {
  std::string manifest, blob;
  put<std::uint32_t>(manifest, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(manifest, static_cast<std::uint32_t>(p.name.size()));
    manifest += p.name;
    put<std::uint32_t>(manifest, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put<std::uint64_t>(manifest, d);
    const auto values = p.tensor.values();
    const bool as_float = fits_float(values);
    put<std::uint8_t>(manifest, as_float ? 0 : 1);
    put<std::uint64_t>(manifest, blob.size());
    for (double v : values) {
      if (as_float) {
        put<float>(blob, static_cast<float>(v));
      } else {
        put<double>(blob, v);
      }
    }
  }
  const std::string head = header.dump();
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(head.size()));
  out += head;
  out += manifest;
  out += blob;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, out);
}

Json header_for(const char* kind, const ModelConfig& cfg, const std::vector<CameraId>& cameras) {
  return Json{{"kind", kind}, {"config", model_config_to_json(cfg)}, {"cameras", cameras}};
}

void restore(ParamList params, Reader& r, const std::filesystem::path& path) {
  const auto count = r.get<std::uint32_t>();
  struct Entry {
    Shape shape;
    std::uint8_t dtype;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.bytes(r.get<std::uint32_t>());
    Entry e;
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint64_t>());
    e.dtype = r.get<std::uint8_t>();
    e.offset = r.get<std::uint64_t>();
    if (e.dtype > 1) throw FormatError(path.string() + ": bad dtype for " + name);
    entries.emplace(name, std::move(e));
  }
  const std::size_t base = r.pos();
  if (entries.size() != params.size()) {
    throw FormatError(path.string() + ": " + std::to_string(entries.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = entries.find(p.name);
    if (it == entries.end()) throw FormatError(path.string() + ": missing tensor " + p.name);
    const auto& e = it->second;
    if (e.shape != p.tensor.shape()) {
      throw FormatError(path.string() + ": shape " + shape_to_string(e.shape) + " for " + p.name + ", expected " +
                        shape_to_string(p.tensor.shape()));
    }
    const std::size_t width = e.dtype == 0 ? sizeof(float) : sizeof(double);
    const std::size_t n = p.tensor.numel();
    if (base + e.offset + n * width > r.size()) throw FormatError(path.string() + ": blob out of range for " + p.name);
    auto values = p.tensor.mutable_values();
    const char* src = r.at(base + e.offset);
    for (std::size_t k = 0; k < n; ++k) {
      if (e.dtype == 0) {
        float f;
        std::memcpy(&f, src + k * width, sizeof f);
        values[k] = f;
      } else {
        std::memcpy(&values[k], src + k * width, sizeof(double));
      }
    }
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VdeModel& model) {
  std::vector<CameraId> cams;
  for (const auto& [c, _] : model.r2mcs) cams.push_back(c);
  write_file(path, header_for(model.direct_head ? "direct" : "vde", model.config, cams), model.parameters());
}

void save_checkpoint(const std::filesystem::path& path, const MultiDecoderModel& model) {
  std::vector<CameraId> cams;
  for (const auto& [c, _] : model.decoders) cams.push_back(c);
  write_file(path, header_for("multiple_decoders", model.config, cams), model.parameters());
}

AnyModel load_checkpoint(const std::filesystem::path& path) {
  Reader r(read_text_file(path));
  if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": bad magic at byte 0");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  Json header;
  try {
    header = Json::parse(r.bytes(r.get<std::uint32_t>()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  const auto kind = header.at("kind").get<std::string>();
  const auto cfg = model_config_from_json(header.at("config"), toy_config());
  const auto cams = header.at("cameras").get<std::vector<CameraId>>();
  Rng rng(0);
  if (kind == "multiple_decoders") {
    auto m = MultiDecoderModel::create(cfg, cams, rng);
    restore(m.parameters(), r, path);
    return m;
  }
  if (kind != "vde" && kind != "direct") throw FormatError(path.string() + ": unknown model kind '" + kind + "'");
  auto m = kind == "vde" ? VdeModel::create(cfg, rng) : VdeModel::create_direct(cfg, rng);
  for (const auto& c : cams) add_camera(m, c, rng);
  restore(m.parameters(), r, path);
  return m;
}

VdeModel load_vde_checkpoint(const std::filesystem::path& path) {
  auto any = load_checkpoint(path);
  if (auto* m = std::get_if<VdeModel>(&any)) return std::move(*m);
  throw LookupError(path.string() + ": checkpoint holds a multiple-decoder model");
}

}  // namespace vde
