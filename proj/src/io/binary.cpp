#include "mvgen/io/binary.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mvgen::io {

void ByteWriter::u16(std::uint16_t v) {
  buffer_.push_back(static_cast<char>(v & 0xff));
  buffer_.push_back(static_cast<char>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) buffer_.push_back(static_cast<char>((v >> shift) & 0xff));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f32s(std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    buffer_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  } else {
    for (float v : values) f32(v);
  }
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) throw FormatError("truncated payload");
}

std::uint16_t ByteReader::u16() {
  need(2);
  const auto* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
  pos_ += 2;
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t ByteReader::u32() {
  need(4);
  const auto* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
  pos_ += 4;
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

void ByteReader::f32s(std::span<float> out) {
  need(out.size_bytes());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  } else {
    for (float& v : out) v = f32();
  }
}

std::string_view ByteReader::bytes(std::size_t n) {
  need(n);
  std::string_view s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mvgen::io
