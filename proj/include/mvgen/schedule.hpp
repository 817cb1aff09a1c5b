#pragma once

#include "mvgen/tensor.hpp"

#include <vector>

namespace mvgen {

/// Linear per-step variances and their cumulative signal coefficients.
/// alpha_bar[t] = prod_{s <= t} (1 - beta[s]).
struct NoiseSchedule {
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  // alpha_bar at t, with t = -1 meaning the clean endpoint (1.0).
  double alpha_bar_at(int t) const;
};

// Throws std::invalid_argument unless 0 < beta_start <= beta_end < 1 and steps >= 2.
NoiseSchedule make_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

// sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * noise
template <typename Scalar>
Tensor<Scalar> forward_diffuse(const Tensor<Scalar>& x0, int t, const Tensor<Scalar>& noise,
                               const NoiseSchedule& schedule);

// Same map with an explicit signal coefficient.
template <typename Scalar>
Tensor<Scalar> mix_signal_noise(const Tensor<Scalar>& x0, double alpha_bar, const Tensor<Scalar>& noise);

}  // namespace mvgen
