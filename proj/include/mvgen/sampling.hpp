#pragma once

#include "mvgen/schedule.hpp"
#include "mvgen/unet.hpp"

#include <functional>
#include <map>
#include <optional>

namespace mvgen {

struct SamplerConfig {
  int steps = 50;
  double gamma = 1.5;
  std::vector<int> timesteps;  // explicit increasing subsequence; empty means uniform stride
  bool share_initial_noise = true;

  // Increasing timesteps into [0, T). Throws std::invalid_argument when
  // the config is inconsistent with T.
  std::vector<int> subsequence(int schedule_steps) const;
};

// floor(i * T / steps) for i in [0, steps).
std::vector<int> uniform_timesteps(int schedule_steps, int steps);

// Clamps to [0, 4]; warns on stderr above 2.5 or when clamping.
double effective_gamma(double gamma);

// Predicted noise for one image [S, S, C] at timestep t and pose.
template <typename Scalar>
using EpsFn = std::function<Tensor<Scalar>(const Tensor<Scalar>& x, int t, int pose,
                                           const AttentionControl<Scalar>& control)>;

// Binds the U-Net; `params` must outlive the returned function.
template <typename Scalar>
EpsFn<Scalar> unet_denoiser(const UNetConfig& config, const ParameterSet<Scalar>& params);

// (1 - gamma) * hard + gamma * soft; gamma == 1 returns soft unchanged.
template <typename Scalar>
Tensor<Scalar> hag_combine(const Tensor<Scalar>& eps_soft, const Tensor<Scalar>& eps_hard, double gamma);

// One deterministic update between arbitrary signal levels.
template <typename Scalar>
Tensor<Scalar> ddim_transfer(const Tensor<Scalar>& x, const Tensor<Scalar>& eps, double alpha_bar_from,
                             double alpha_bar_to);

// x_t -> x_{t_prev}; t_prev = -1 yields the clean estimate.
template <typename Scalar>
Tensor<Scalar> ddim_step(const Tensor<Scalar>& x_t, const Tensor<Scalar>& eps, int t, int t_prev,
                         const NoiseSchedule& schedule);

// Reference keys/values per timestep, then per cross-frame layer.
template <typename Scalar>
using ReferenceKV = std::map<int, LayerKv<Scalar>>;

// Throws std::invalid_argument unless kv holds exactly `layers` at every
// timestep of `timesteps`.
template <typename Scalar>
void check_reference_kv(const ReferenceKV<Scalar>& kv, const std::vector<int>& timesteps,
                        const std::vector<std::string>& layers);

enum class SampleMode { standard, record, reference };

template <typename Scalar>
struct SampleResult {
  Tensor<Scalar> image;
  ReferenceKV<Scalar> kv;  // filled in record mode
};

// Iterates ddim_step from timesteps.back() down to a clean image. In
// reference mode every step evaluates soft cross-frame attention against
// reference->at(t) and, unless gamma == 1, the hard variant combined by
// hag_combine.
template <typename Scalar>
SampleResult<Scalar> ddim_sample(const EpsFn<Scalar>& eps_fn, const NoiseSchedule& schedule, const Tensor<Scalar>& noise,
                                 int pose, const std::vector<int>& timesteps, SampleMode mode = SampleMode::standard,
                                 const ReferenceKV<Scalar>* reference = nullptr, double gamma = 1.0);

template <typename Scalar>
struct InversionResult {
  Tensor<Scalar> noise;
  ReferenceKV<Scalar> kv;
};

// Runs the sampler backwards: from signal level t_{i-1} to t_i with
// eps evaluated at (x_{t_{i-1}}, t_i), recording K/V at each t_i.
template <typename Scalar>
InversionResult<Scalar> ddim_invert(const EpsFn<Scalar>& eps_fn, const NoiseSchedule& schedule,
                                    const Tensor<Scalar>& image, int pose, const std::vector<int>& timesteps);

struct ViewRequest {
  std::optional<Tensor<float>> reference_image;  // image reference when set
  int reference_pose = 0;
  std::uint64_t seed = 0;  // noise reference, and per-target noise when not shared
  std::vector<int> targets;
};

struct NovelViews {
  Tensor<float> reference_noise;
  Tensor<float> reference;  // generated image (noise reference) or reconstruction (image reference)
  std::vector<Tensor<float>> views;  // one per target, request order
};

// Initial noise of a noise-referenced request.
Tensor<float> reference_noise(const UNetConfig& config, std::uint64_t seed);
// Initial noise for `target` when views do not share the reference noise.
Tensor<float> target_noise(const UNetConfig& config, std::uint64_t seed, int target);

// Each target depends only on (checkpoint, reference, its own pose, config),
// so any subset or order of targets yields the same per-view images.
NovelViews generate_novel_views(const UNetConfig& model, const ParameterSet<float>& params,
                                const NoiseSchedule& schedule, const ViewRequest& request,
                                const SamplerConfig& config);

}  // namespace mvgen
