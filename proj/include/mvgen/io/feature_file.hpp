#pragma once

#include "mvgen/feature_grid.hpp"
#include "mvgen/io/binary.hpp"

#include <filesystem>
#include <vector>

namespace mvgen::io {

// "MRGF" feature files: u32 version, count, h, w, c, patch_size, then per
// record a u16-length UTF-8 id and h*w*c little-endian floats in (row, col,
// channel) order.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

std::string encode_features(const std::vector<FeatureGrid>& grids);

// Throws FormatError with "bad magic", "unsupported version N",
// "truncated payload" or "duplicate image_id <id>".
std::vector<FeatureGrid> decode_features(std::string_view bytes);

void write_features(const std::filesystem::path& path, const std::vector<FeatureGrid>& grids);
std::vector<FeatureGrid> read_features(const std::filesystem::path& path);

}  // namespace mvgen::io
