#include "mvgen/io/png_image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace mvgen::io {

float pixel_to_unit(std::uint8_t p) { return static_cast<float>(p) / 127.5f - 1.0f; }

std::uint8_t unit_to_pixel(float v) {
  const float scaled = std::nearbyint((v + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
}

Tensor<float> decode_png(std::string_view bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png: ") + img.message);
  }
  if (img.format != PNG_FORMAT_RGB) {
    png_image_free(&img);
    std::string what = "png: unsupported format (need 8-bit RGB):";
    if (img.format & PNG_FORMAT_FLAG_LINEAR) what += " 16-bit";
    if (img.format & PNG_FORMAT_FLAG_ALPHA) what += " alpha";
    if (img.format & PNG_FORMAT_FLAG_COLORMAP) what += " palette";
    if (!(img.format & PNG_FORMAT_FLAG_COLOR)) what += " grayscale";
    throw FormatError(what);
  }
  const Index h = img.height, w = img.width;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(h * w * 3));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png: ") + img.message);
  }
  Tensor<float> out({h, w, 3});
  for (std::size_t i = 0; i < pixels.size(); ++i) out[static_cast<Index>(i)] = pixel_to_unit(pixels[i]);
  return out;
}

std::string encode_png(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw std::invalid_argument("encode_png: expected [H, W, 3], got " + shape_string(image.shape()));
  }
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(image.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = unit_to_pixel(image[static_cast<Index>(i)]);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dim(1));
  img.height = static_cast<png_uint_32>(image.dim(0));
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png: ") + img.message);
  }
  out.resize(size);
  return out;
}

Tensor<float> read_image(const std::filesystem::path& path) {
  try {
    return decode_png(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_image(const std::filesystem::path& path, const Tensor<float>& image) {
  write_file(path, encode_png(image));
}

}  // namespace mvgen::io
