#pragma once

#include "mvgen/checkpoint.hpp"

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace mvgen {

/// NaN/Inf during training; `step` is the update that produced it.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::int64_t step) : std::runtime_error(what), step(step) {}
  std::int64_t step;
};

template <typename Scalar>
using DenoiseFn = std::function<Var<Scalar>(const Var<Scalar>& x_t, std::span<const int> timesteps,
                                            std::span<const int> poses)>;

/// Per-item timestep and noise for one loss evaluation.
template <typename Scalar>
struct NoiseDraw {
  std::vector<int> timesteps;
  Tensor<Scalar> noise;
  Tensor<Scalar> noisy;  // forward-diffused input
};

// t ~ U{0, T-1} per item and eps ~ N(0, I), both from `seed`.
template <typename Scalar>
NoiseDraw<Scalar> draw_noise(const Tensor<Scalar>& x0, const NoiseSchedule& schedule, std::uint64_t seed);

// Mean squared error between the predicted and the injected noise.
template <typename Scalar>
Var<Scalar> ddpm_loss(const DenoiseFn<Scalar>& denoise, const Tensor<Scalar>& x0, std::span<const int> poses,
                      const NoiseSchedule& schedule, std::uint64_t seed);

template <typename Scalar>
Var<Scalar> ddpm_loss(const UNetConfig& config, const BoundParameters<Scalar>& params, const Tensor<Scalar>& x0,
                      std::span<const int> poses, const NoiseSchedule& schedule, std::uint64_t seed);

struct TrainingData {
  std::vector<std::string> ids;
  std::vector<Tensor<float>> images;  // [S, S, 3] each
  std::vector<int> poses;
};

struct TrainSettings {
  std::int64_t iterations = 0;  // total updates, counted from step 0
  int batch_size = 64;
  AdamSettings adam;
  double grad_clip = 1.0;  // global L2 norm, <= 0 disables
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;
};

// Items used by update `step` (0-based). Each epoch is a seeded permutation,
// so any step's batch is computable without replaying earlier ones.
std::vector<int> batch_indices(std::int64_t step, int batch_size, int dataset_size, std::uint64_t seed);

struct TrainCallbacks {
  std::function<void(std::int64_t step, double loss)> on_step;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

// Continues from ckpt.step up to settings.iterations updates. Throws
// NumericError on a non-finite loss or gradient.
void train(Checkpoint& ckpt, const TrainingData& data, const TrainSettings& settings,
           const TrainCallbacks& callbacks = {});

// Trailing mean over up to `window` values ending at each index.
std::vector<double> smoothed(std::span<const double> values, int window = 100);

}  // namespace mvgen
