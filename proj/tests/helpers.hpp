#pragma once

#include "mvgen/tensor.hpp"

#include <cstdlib>
#include <filesystem>
#include <string>

namespace testing {

// Fresh scratch directory under the per-test temp root.
inline std::filesystem::path scratch(const std::string& name) {
  const char* root = std::getenv("MVGEN_TEST_TMP");
  std::filesystem::path dir = std::filesystem::path(root ? root : "/tmp/mvgen_tests") / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename Scalar>
mvgen::Tensor<Scalar> random_tensor(const mvgen::Shape& shape, std::uint64_t seed, double scale = 1.0) {
  mvgen::Tensor<Scalar> t = mvgen::seeded_normal<Scalar>(shape, seed);
  t.array() *= static_cast<Scalar>(scale);
  return t;
}

}  // namespace testing
