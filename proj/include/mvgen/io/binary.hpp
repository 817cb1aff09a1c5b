#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mvgen::io {

/// Malformed or unreadable file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Appends fixed-width little-endian values to a byte buffer.
class ByteWriter {
 public:
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f32(float v);
  void f32s(std::span<const float> values);
  void bytes(std::string_view s) { buffer_.append(s); }

  const std::string& buffer() const { return buffer_; }
  std::string take() { return std::move(buffer_); }

 private:
  std::string buffer_;
};

// Reads little-endian values; running off the end throws FormatError with the
// "truncated payload" message.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  void f32s(std::span<float> out);
  std::string_view bytes(std::size_t n);

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const;

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

// Writes through a temporary sibling and renames, so readers never see a
// partial file.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace mvgen::io
