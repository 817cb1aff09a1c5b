#include "mvgen/adam.hpp"

#include <cmath>

namespace mvgen {

template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const std::vector<Tensor<Scalar>>& grads,
               AdamState<Scalar>& state) {
  auto& entries = params.entries();
  if (grads.size() != entries.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (grads[i].shape() != entries[i].value.shape()) {
      throw std::invalid_argument("adam_step: gradient shape " + shape_string(grads[i].shape()) +
                                  " for parameter " + entries[i].name + " " +
                                  shape_string(entries[i].value.shape()));
    }
    if (!grads[i].all_finite()) {
      throw std::domain_error("adam_step: non-finite gradient for parameter " + entries[i].name);
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& e : entries) {
      state.first_moment.emplace_back(e.value.shape());
      state.second_moment.emplace_back(e.value.shape());
    }
  }
  if (state.first_moment.size() != entries.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameter set");
  }

  ++state.step;
  const auto& s = state.settings;
  const Scalar b1 = static_cast<Scalar>(s.beta1), b2 = static_cast<Scalar>(s.beta2);
  const double t = static_cast<double>(state.step);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(s.beta1, t));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(s.beta2, t));
  const Scalar lr = static_cast<Scalar>(s.lr), eps = static_cast<Scalar>(s.eps);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& m = state.first_moment[i].array();
    auto& v = state.second_moment[i].array();
    if (state.first_moment[i].shape() != entries[i].value.shape()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for " + entries[i].name);
    }
    const auto& g = grads[i].array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    entries[i].value.array() -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

template void adam_step(ParameterSet<float>&, const std::vector<Tensor<float>>&, AdamState<float>&);
template void adam_step(ParameterSet<double>&, const std::vector<Tensor<double>>&, AdamState<double>&);

}  // namespace mvgen
