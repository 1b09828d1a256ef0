#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "x3d/optim.hpp"

namespace x3d {

inline constexpr std::string_view kCheckpointMagic = "X3DC";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "X3DC" | u32 version | u32 entry count |
//   per entry: u16 name length, UTF-8 name, u8 rank, rank x u32 extents,
//              f32 data in row-major order |
//   u32 CRC-32 of every preceding byte.

std::string encode_checkpoint(std::span<const Parameter> params);

/// Parameters come back unfrozen with requires_grad set. Throws FormatError on a
/// bad magic, unsupported version, truncation, trailing bytes or CRC mismatch.
std::vector<Parameter> decode_checkpoint(std::string_view bytes, const std::string& context = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter> params);

/// Throws MissingCheckpointError when `path` does not exist.
std::vector<Parameter> load_checkpoint(const std::filesystem::path& path);

/// Deep copy: fresh leaves with the same names, values and frozen flags.
std::vector<Parameter> clone_parameters(std::span<const Parameter> params);

}  // namespace x3d
