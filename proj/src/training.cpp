#include "mvgen/training.hpp"

#include "mvgen/ops.hpp"

#include <cmath>
#include <numeric>

namespace mvgen {

template <typename Scalar>
NoiseDraw<Scalar> draw_noise(const Tensor<Scalar>& x0, const NoiseSchedule& schedule, std::uint64_t seed) {
  if (x0.rank() < 2) throw std::invalid_argument("draw_noise: x0 must be batched");
  const Index batch = x0.dim(0);
  const Index per_item = x0.size() / batch;
  NoiseDraw<Scalar> d;
  NormalStream steps(derive_seed(seed, 0));
  for (Index b = 0; b < batch; ++b) {
    const auto t = static_cast<int>(steps.uniform() * schedule.steps);
    d.timesteps.push_back(std::min(t, schedule.steps - 1));
  }
  d.noise = seeded_normal<Scalar>(x0.shape(), derive_seed(seed, 1));
  d.noisy = Tensor<Scalar>(x0.shape());
  for (Index b = 0; b < batch; ++b) {
    const double ab = schedule.alpha_bar[static_cast<std::size_t>(d.timesteps[static_cast<std::size_t>(b)])];
    const auto signal = static_cast<Scalar>(std::sqrt(ab));
    const auto noise = static_cast<Scalar>(std::sqrt(1.0 - ab));
    d.noisy.array().segment(b * per_item, per_item) =
        signal * x0.array().segment(b * per_item, per_item) + noise * d.noise.array().segment(b * per_item, per_item);
  }
  return d;
}

template <typename Scalar>
Var<Scalar> ddpm_loss(const DenoiseFn<Scalar>& denoise, const Tensor<Scalar>& x0, std::span<const int> poses,
                      const NoiseSchedule& schedule, std::uint64_t seed) {
  if (x0.rank() < 2 || x0.dim(0) < 1) throw std::invalid_argument("ddpm_loss: empty batch");
  if (static_cast<Index>(poses.size()) != x0.dim(0)) throw std::invalid_argument("ddpm_loss: one pose per item");
  NoiseDraw<Scalar> d = draw_noise(x0, schedule, seed);
  const Var<Scalar> pred = denoise(Var<Scalar>::constant(std::move(d.noisy)), d.timesteps, poses);
  return mean_squared_error(pred, Var<Scalar>::constant(std::move(d.noise)));
}

template <typename Scalar>
Var<Scalar> ddpm_loss(const UNetConfig& config, const BoundParameters<Scalar>& params, const Tensor<Scalar>& x0,
                      std::span<const int> poses, const NoiseSchedule& schedule, std::uint64_t seed) {
  DenoiseFn<Scalar> fn = [&](const Var<Scalar>& x, std::span<const int> t, std::span<const int> p) {
    return unet_forward<Scalar>(config, params, x, t, p);
  };
  return ddpm_loss<Scalar>(fn, x0, poses, schedule, seed);
}

std::vector<int> batch_indices(std::int64_t step, int batch_size, int dataset_size, std::uint64_t seed) {
  if (dataset_size < 1 || batch_size < 1) throw std::invalid_argument("batch_indices: empty dataset or batch");
  const std::uint64_t shuffle_seed = derive_seed(seed, 2);
  std::vector<int> out;
  std::int64_t cached_epoch = -1;
  std::vector<int> perm;
  for (int j = 0; j < batch_size; ++j) {
    const std::int64_t g = step * batch_size + j;
    const std::int64_t epoch = g / dataset_size;
    if (epoch != cached_epoch) {
      perm.resize(static_cast<std::size_t>(dataset_size));
      std::iota(perm.begin(), perm.end(), 0);
      NormalStream rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
      for (int i = dataset_size - 1; i > 0; --i) {
        const auto k = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(k)]);
      }
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(g % dataset_size)]);
  }
  return out;
}

std::vector<double> smoothed(std::span<const double> values, int window) {
  std::vector<double> out(values.size());
  double run = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    run += values[i];
    if (i >= static_cast<std::size_t>(window)) run -= values[i - static_cast<std::size_t>(window)];
    out[i] = run / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

void train(Checkpoint& ckpt, const TrainingData& data, const TrainSettings& settings,
           const TrainCallbacks& callbacks) {
  const int n = static_cast<int>(data.images.size());
  if (n == 0) throw std::invalid_argument("train: empty dataset");
  if (data.poses.size() != data.images.size()) throw std::invalid_argument("train: one pose label per image");
  const int s = ckpt.config.image_size;
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    if (data.images[i].shape() != Shape{s, s, ckpt.config.in_channels}) {
      throw std::invalid_argument("train: image " + (i < data.ids.size() ? data.ids[i] : std::to_string(i)) +
                                  " is " + shape_string(data.images[i].shape()) + ", model expects " +
                                  std::to_string(s) + "x" + std::to_string(s));
    }
    if (data.poses[i] < 0 || data.poses[i] >= ckpt.config.pose_count) {
      throw std::invalid_argument("train: pose label out of range for image " +
                                  (i < data.ids.size() ? data.ids[i] : std::to_string(i)));
    }
  }
  if (!ckpt.optimizer) {
    AdamState<float> st;
    st.settings = settings.adam;
    ckpt.optimizer = std::move(st);
  }
  ckpt.optimizer->settings = settings.adam;
  const Index per_item = static_cast<Index>(s) * s * ckpt.config.in_channels;
  const std::uint64_t loss_seed = derive_seed(settings.seed, 1);

  while (ckpt.step < settings.iterations) {
    const std::int64_t step = ckpt.step;
    const auto idx = batch_indices(step, settings.batch_size, n, settings.seed);
    Tensor<float> x0({settings.batch_size, s, s, ckpt.config.in_channels});
    std::vector<int> poses;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      x0.array().segment(static_cast<Index>(j) * per_item, per_item) = data.images[static_cast<std::size_t>(idx[j])].array();
      poses.push_back(data.poses[static_cast<std::size_t>(idx[j])]);
    }
    BoundParameters<float> bound(ckpt.params, true);
    const Var<float> loss = ddpm_loss<float>(ckpt.config, bound, x0, poses, ckpt.schedule,
                                             derive_seed(loss_seed, static_cast<std::uint64_t>(step)));
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(step + 1), step + 1);
    std::vector<Tensor<float>> grads = bound.gradients(backward(loss));
    if (settings.grad_clip > 0) {
      double sq = 0;
      for (const auto& g : grads) sq += g.array().template cast<double>().square().sum();
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient at step " + std::to_string(step + 1), step + 1);
      if (norm > settings.grad_clip) {
        const auto f = static_cast<float>(settings.grad_clip / norm);
        for (auto& g : grads) g.array() *= f;
      }
    }
    try {
      adam_step(ckpt.params, grads, *ckpt.optimizer);
    } catch (const std::domain_error& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step + 1), step + 1);
    }
    ckpt.step = step + 1;
    if (callbacks.on_step) callbacks.on_step(ckpt.step, value);
    if (callbacks.on_checkpoint && settings.checkpoint_every > 0 && ckpt.step % settings.checkpoint_every == 0) {
      callbacks.on_checkpoint(ckpt);
    }
  }
}

#define MVGEN_INSTANTIATE(S)                                                                            \
  template NoiseDraw<S> draw_noise<S>(const Tensor<S>&, const NoiseSchedule&, std::uint64_t);          \
  template Var<S> ddpm_loss<S>(const DenoiseFn<S>&, const Tensor<S>&, std::span<const int>,            \
                               const NoiseSchedule&, std::uint64_t);                                    \
  template Var<S> ddpm_loss<S>(const UNetConfig&, const BoundParameters<S>&, const Tensor<S>&,          \
                               std::span<const int>, const NoiseSchedule&, std::uint64_t);
MVGEN_INSTANTIATE(float)
MVGEN_INSTANTIATE(double)
#undef MVGEN_INSTANTIATE

}  // namespace mvgen
