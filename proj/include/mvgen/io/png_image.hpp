#pragma once

#include "mvgen/io/binary.hpp"
#include "mvgen/tensor.hpp"

#include <filesystem>

namespace mvgen::io {

// 8-bit value p maps to p * 2/255 - 1.
float pixel_to_unit(std::uint8_t p);
// Inverse map, rounded half-to-even and clamped to [0, 255].
std::uint8_t unit_to_pixel(float v);

// [H, W, 3] in [-1, 1]. Only 8-bit RGB files are accepted; anything else
// throws FormatError naming the unsupported format.
Tensor<float> decode_png(std::string_view bytes);
std::string encode_png(const Tensor<float>& image);

Tensor<float> read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor<float>& image);

}  // namespace mvgen::io
