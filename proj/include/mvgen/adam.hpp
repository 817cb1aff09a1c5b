#pragma once

#include "mvgen/parameters.hpp"

#include <cstdint>
#include <vector>

namespace mvgen {

struct AdamSettings {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamSettings settings;
  std::int64_t step = 0;
  std::vector<Tensor<Scalar>> first_moment;
  std::vector<Tensor<Scalar>> second_moment;
};

// One bias-corrected Adam update of every parameter, in registration order.
// Throws std::invalid_argument on a shape mismatch and std::domain_error on a
// non-finite gradient; parameters are untouched in both cases.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const std::vector<Tensor<Scalar>>& grads,
               AdamState<Scalar>& state);

}  // namespace mvgen
