#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mvgen {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

// Product of extents. Throws std::invalid_argument on a non-positive extent
// or when the product does not fit in Index.
Index checked_numel(const Shape& shape);

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of 32- or 64-bit floats.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(Storage::Zero(checked_numel(shape_))) {}

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor scalar(Scalar value) { return constant({1}, value); }

  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values) {
    Storage data(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) data[i++] = v;
    return Tensor(std::move(shape), std::move(data));
  }

  bool empty() const { return shape_.empty(); }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar item() const {
    if (data_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  MatrixMap<Scalar> matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap<Scalar>(data_.data(), rows, cols);
  }
  ConstMatrixMap<Scalar> matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap<Scalar>(data_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (checked_numel(shape) != size()) {
      throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                  shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  void check_view(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw std::invalid_argument("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " of tensor " + shape_string(shape_));
    }
  }

  Shape shape_;
  Storage data_;
};

template <typename Scalar>
bool bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  return (a.array() - b.array()).abs().maxCoeff();
}

// splitmix64 finalizer over (seed, stream); used for every derived seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Portable standard-normal stream: Box-Muller over mt19937_64 words, so the
/// sequence does not depend on the standard library's distribution code.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed);
  double next();
  // Uniform double in [0, 1) with 53 random bits.
  double uniform();
  std::uint64_t bits();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename Scalar>
Tensor<Scalar> seeded_normal(const Shape& shape, std::uint64_t seed) {
  Tensor<Scalar> t(shape);
  NormalStream stream(seed);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(stream.next());
  return t;
}

}  // namespace mvgen
