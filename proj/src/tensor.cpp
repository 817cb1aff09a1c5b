#include "mvgen/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace mvgen {

Index checked_numel(const Shape& shape) {
  Index n = 1;
  for (Index extent : shape) {
    if (extent <= 0) {
      throw std::invalid_argument("non-positive extent in shape " + shape_string(shape));
    }
    if (n > std::numeric_limits<Index>::max() / extent) {
      throw std::invalid_argument("element count overflows for shape " + shape_string(shape));
    }
    n *= extent;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

NormalStream::NormalStream(std::uint64_t seed) : engine_(seed) {}

std::uint64_t NormalStream::bits() { return engine_(); }

double NormalStream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double NormalStream::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace mvgen
