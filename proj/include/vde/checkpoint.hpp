#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "vde/model.hpp"

namespace vde {

/// Binary layout (little-endian): "VDE1", u32 version, u32 header length,
/// JSON header {kind, config, cameras}, u32 entry count, then per entry
/// {u32 name length, name, u32 rank, u64 dims..., u8 dtype, u64 offset}
/// and finally the blob region. dtype 0 is float32; values that float32
/// cannot hold exactly (fixed mixing coefficients) are stored as dtype 1,
/// float64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using AnyModel = std::variant<VdeModel, MultiDecoderModel>;

void save_checkpoint(const std::filesystem::path& path, const VdeModel& model);
void save_checkpoint(const std::filesystem::path& path, const MultiDecoderModel& model);
AnyModel load_checkpoint(const std::filesystem::path& path);
VdeModel load_vde_checkpoint(const std::filesystem::path& path);

}  // namespace vde
