#include "mvgen/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace mvgen {

std::vector<int> uniform_timesteps(int schedule_steps, int steps) {
  if (steps < 1 || steps > schedule_steps) {
    throw std::invalid_argument("sampler steps must be in [1, " + std::to_string(schedule_steps) + "], got " +
                                std::to_string(steps));
  }
  std::vector<int> out(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    out[static_cast<std::size_t>(i)] =
        static_cast<int>(static_cast<std::int64_t>(i) * schedule_steps / steps);
  }
  return out;
}

std::vector<int> SamplerConfig::subsequence(int schedule_steps) const {
  if (timesteps.empty()) return uniform_timesteps(schedule_steps, steps);
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    if (timesteps[i] < 0 || timesteps[i] >= schedule_steps) {
      throw std::invalid_argument("timestep " + std::to_string(timesteps[i]) + " outside the schedule");
    }
    if (i > 0 && timesteps[i] <= timesteps[i - 1]) throw std::invalid_argument("timesteps must be strictly increasing");
  }
  return timesteps;
}

double effective_gamma(double gamma) {
  if (!std::isfinite(gamma)) throw std::invalid_argument("gamma must be finite");
  const double g = std::clamp(gamma, 0.0, 4.0);
  if (g != gamma) std::cerr << "warning: gamma " << gamma << " clamped to " << g << "\n";
  if (g > 2.5) std::cerr << "warning: gamma " << g << " above 2.5 tends to give unrealistic images\n";
  return g;
}

template <typename Scalar>
EpsFn<Scalar> unet_denoiser(const UNetConfig& config, const ParameterSet<Scalar>& params) {
  auto bound = std::make_shared<BoundParameters<Scalar>>(params, false);
  return [config, bound](const Tensor<Scalar>& x, int t, int pose, const AttentionControl<Scalar>& control) {
    Shape batched{1};
    batched.insert(batched.end(), x.shape().begin(), x.shape().end());
    const int ts[1] = {t};
    const int ps[1] = {pose};
    const Var<Scalar> out =
        unet_forward<Scalar>(config, *bound, Var<Scalar>::constant(x.reshaped(batched)), ts, ps, control);
    return out.value().reshaped(x.shape());
  };
}

template <typename Scalar>
Tensor<Scalar> hag_combine(const Tensor<Scalar>& eps_soft, const Tensor<Scalar>& eps_hard, double gamma) {
  if (eps_soft.shape() != eps_hard.shape()) {
    throw std::invalid_argument("hag_combine: shapes " + shape_string(eps_soft.shape()) + " and " +
                                shape_string(eps_hard.shape()) + " differ");
  }
  if (!(gamma >= 0)) throw std::invalid_argument("hag_combine: gamma must be nonnegative");
  if (gamma == 1.0) return eps_soft;
  const auto g = static_cast<Scalar>(gamma);
  return Tensor<Scalar>(eps_soft.shape(), (Scalar(1) - g) * eps_hard.array() + g * eps_soft.array());
}

template <typename Scalar>
Tensor<Scalar> ddim_transfer(const Tensor<Scalar>& x, const Tensor<Scalar>& eps, double alpha_bar_from,
                             double alpha_bar_to) {
  if (x.shape() != eps.shape()) throw std::invalid_argument("ddim: x and eps shapes differ");
  const double a = std::sqrt(alpha_bar_to / alpha_bar_from);
  const double b = std::sqrt(1.0 - alpha_bar_to) - std::sqrt(alpha_bar_to * (1.0 - alpha_bar_from) / alpha_bar_from);
  return Tensor<Scalar>(x.shape(), static_cast<Scalar>(a) * x.array() + static_cast<Scalar>(b) * eps.array());
}

template <typename Scalar>
Tensor<Scalar> ddim_step(const Tensor<Scalar>& x_t, const Tensor<Scalar>& eps, int t, int t_prev,
                         const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.steps || t_prev < -1 || t_prev >= t) {
    throw std::out_of_range("ddim_step: need 0 <= t < T and -1 <= t_prev < t (t=" + std::to_string(t) +
                            ", t_prev=" + std::to_string(t_prev) + ")");
  }
  return ddim_transfer(x_t, eps, schedule.alpha_bar_at(t), schedule.alpha_bar_at(t_prev));
}

template <typename Scalar>
void check_reference_kv(const ReferenceKV<Scalar>& kv, const std::vector<int>& timesteps,
                        const std::vector<std::string>& layers) {
  for (int t : timesteps) {
    auto it = kv.find(t);
    if (it == kv.end()) throw std::invalid_argument("missing reference K/V for timestep " + std::to_string(t));
    if (it->second.size() != layers.size()) {
      throw std::invalid_argument("reference K/V at timestep " + std::to_string(t) + " has " +
                                  std::to_string(it->second.size()) + " layers, expected " +
                                  std::to_string(layers.size()));
    }
    for (const auto& name : layers) {
      if (!it->second.count(name)) {
        throw std::invalid_argument("reference K/V at timestep " + std::to_string(t) + " lacks layer " + name);
      }
    }
  }
}

template <typename Scalar>
SampleResult<Scalar> ddim_sample(const EpsFn<Scalar>& eps_fn, const NoiseSchedule& schedule, const Tensor<Scalar>& noise,
                                 int pose, const std::vector<int>& timesteps, SampleMode mode,
                                 const ReferenceKV<Scalar>* reference, double gamma) {
  if (timesteps.empty()) throw std::invalid_argument("ddim_sample: empty timestep sequence");
  if (mode == SampleMode::reference) {
    if (!reference) throw std::invalid_argument("ddim_sample: reference mode without reference K/V");
    for (int t : timesteps) {
      if (!reference->count(t)) throw std::invalid_argument("missing reference K/V for timestep " + std::to_string(t));
    }
  }
  SampleResult<Scalar> result;
  Tensor<Scalar> x = noise;
  for (std::size_t i = timesteps.size(); i-- > 0;) {
    const int t = timesteps[i];
    const int t_prev = i == 0 ? -1 : timesteps[i - 1];
    Tensor<Scalar> eps;
    if (mode == SampleMode::standard) {
      eps = eps_fn(x, t, pose, {});
    } else if (mode == SampleMode::record) {
      AttentionControl<Scalar> control;
      control.mode = AttentionMode::record_kv;
      control.record = &result.kv[t];
      eps = eps_fn(x, t, pose, control);
    } else {
      AttentionControl<Scalar> control;
      control.mode = AttentionMode::use_reference_kv;
      control.reference = &reference->at(t);
      eps = eps_fn(x, t, pose, control);
      if (gamma != 1.0) {
        control.mode = AttentionMode::use_reference_kv_hard;
        eps = hag_combine(eps, eps_fn(x, t, pose, control), gamma);
      }
    }
    x = ddim_step(x, eps, t, t_prev, schedule);
  }
  result.image = std::move(x);
  return result;
}

template <typename Scalar>
InversionResult<Scalar> ddim_invert(const EpsFn<Scalar>& eps_fn, const NoiseSchedule& schedule,
                                    const Tensor<Scalar>& image, int pose, const std::vector<int>& timesteps) {
  if (timesteps.empty()) throw std::invalid_argument("ddim_invert: empty timestep sequence");
  InversionResult<Scalar> result;
  Tensor<Scalar> x = image;
  int level = -1;
  for (int t : timesteps) {
    if (t <= level || t >= schedule.steps) throw std::invalid_argument("ddim_invert: timesteps must increase within [0, T)");
    AttentionControl<Scalar> control;
    control.mode = AttentionMode::record_kv;
    control.record = &result.kv[t];
    const Tensor<Scalar> eps = eps_fn(x, t, pose, control);
    x = ddim_transfer(x, eps, schedule.alpha_bar_at(level), schedule.alpha_bar_at(t));
    level = t;
  }
  result.noise = std::move(x);
  return result;
}

Tensor<float> reference_noise(const UNetConfig& config, std::uint64_t seed) {
  return seeded_normal<float>({config.image_size, config.image_size, config.in_channels}, derive_seed(seed, 0));
}

Tensor<float> target_noise(const UNetConfig& config, std::uint64_t seed, int target) {
  return seeded_normal<float>({config.image_size, config.image_size, config.in_channels},
                              derive_seed(derive_seed(seed, 1), static_cast<std::uint64_t>(target)));
}

NovelViews generate_novel_views(const UNetConfig& model, const ParameterSet<float>& params,
                                const NoiseSchedule& schedule, const ViewRequest& request,
                                const SamplerConfig& config) {
  auto check_pose = [&](int p, const char* what) {
    if (p < 0 || p >= model.pose_count) {
      throw std::invalid_argument(std::string(what) + " pose " + std::to_string(p) + " outside [0, " +
                                  std::to_string(model.pose_count) + ")");
    }
  };
  check_pose(request.reference_pose, "reference");
  for (int p : request.targets) check_pose(p, "target");
  const double gamma = effective_gamma(config.gamma);
  const std::vector<int> timesteps = config.subsequence(schedule.steps);
  const EpsFn<float> eps_fn = unet_denoiser(model, params);

  NovelViews out;
  ReferenceKV<float> kv;
  if (request.reference_image) {
    InversionResult<float> inv = ddim_invert(eps_fn, schedule, *request.reference_image, request.reference_pose, timesteps);
    out.reference_noise = std::move(inv.noise);
    kv = std::move(inv.kv);
    out.reference = ddim_sample(eps_fn, schedule, out.reference_noise, request.reference_pose, timesteps).image;
  } else {
    out.reference_noise = reference_noise(model, request.seed);
    SampleResult<float> ref =
        ddim_sample(eps_fn, schedule, out.reference_noise, request.reference_pose, timesteps, SampleMode::record);
    out.reference = std::move(ref.image);
    kv = std::move(ref.kv);
  }
  check_reference_kv(kv, timesteps, cross_frame_layers(model));
  for (int target : request.targets) {
    const Tensor<float> init = config.share_initial_noise ? out.reference_noise : target_noise(model, request.seed, target);
    out.views.push_back(ddim_sample(eps_fn, schedule, init, target, timesteps, SampleMode::reference, &kv, gamma).image);
  }
  return out;
}

#define MVGEN_INSTANTIATE(S)                                                                                   \
  template EpsFn<S> unet_denoiser<S>(const UNetConfig&, const ParameterSet<S>&);                              \
  template Tensor<S> hag_combine<S>(const Tensor<S>&, const Tensor<S>&, double);                              \
  template Tensor<S> ddim_transfer<S>(const Tensor<S>&, const Tensor<S>&, double, double);                    \
  template Tensor<S> ddim_step<S>(const Tensor<S>&, const Tensor<S>&, int, int, const NoiseSchedule&);        \
  template void check_reference_kv<S>(const ReferenceKV<S>&, const std::vector<int>&,                         \
                                      const std::vector<std::string>&);                                       \
  template SampleResult<S> ddim_sample<S>(const EpsFn<S>&, const NoiseSchedule&, const Tensor<S>&, int,       \
                                          const std::vector<int>&, SampleMode, const ReferenceKV<S>*, double); \
  template InversionResult<S> ddim_invert<S>(const EpsFn<S>&, const NoiseSchedule&, const Tensor<S>&, int,    \
                                             const std::vector<int>&);
MVGEN_INSTANTIATE(float)
MVGEN_INSTANTIATE(double)
#undef MVGEN_INSTANTIATE

}  // namespace mvgen
