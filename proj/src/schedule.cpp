#include "mvgen/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mvgen {

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == -1) return 1.0;
  if (t < 0 || t >= steps) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) + ")");
  }
  return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw std::invalid_argument("make_schedule: need at least 2 steps");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: require 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(static_cast<std::size_t>(steps));
  s.alpha_bar.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double beta = beta_start + (beta_end - beta_start) * t / (steps - 1);
    prod *= 1.0 - beta;
    s.beta[static_cast<std::size_t>(t)] = beta;
    s.alpha_bar[static_cast<std::size_t>(t)] = prod;
  }
  return s;
}

template <typename Scalar>
Tensor<Scalar> mix_signal_noise(const Tensor<Scalar>& x0, double alpha_bar, const Tensor<Scalar>& noise) {
  if (x0.shape() != noise.shape()) {
    throw std::invalid_argument("forward_diffuse: x0 " + shape_string(x0.shape()) + " vs noise " +
                                shape_string(noise.shape()));
  }
  const Scalar a = static_cast<Scalar>(std::sqrt(alpha_bar));
  const Scalar b = static_cast<Scalar>(std::sqrt(1.0 - alpha_bar));
  return Tensor<Scalar>(x0.shape(), a * x0.array() + b * noise.array());
}

template <typename Scalar>
Tensor<Scalar> forward_diffuse(const Tensor<Scalar>& x0, int t, const Tensor<Scalar>& noise,
                               const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.steps) {
    throw std::out_of_range("forward_diffuse: timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(schedule.steps) + ")");
  }
  return mix_signal_noise(x0, schedule.alpha_bar[static_cast<std::size_t>(t)], noise);
}

template Tensor<float> forward_diffuse(const Tensor<float>&, int, const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> forward_diffuse(const Tensor<double>&, int, const Tensor<double>&, const NoiseSchedule&);
template Tensor<float> mix_signal_noise(const Tensor<float>&, double, const Tensor<float>&);
template Tensor<double> mix_signal_noise(const Tensor<double>&, double, const Tensor<double>&);

}  // namespace mvgen
