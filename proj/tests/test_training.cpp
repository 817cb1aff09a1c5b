#include "helpers.hpp"
#include "tiny.hpp"

#include "mvgen/ops.hpp"
#include "mvgen/training.hpp"

#include <doctest.h>

#include <limits>
#include <set>

using namespace mvgen;
using testing::tiny_unet;

namespace {

TrainingData tiny_data(int n) {
  TrainingData d;
  for (int i = 0; i < n; ++i) {
    d.ids.push_back("img" + std::to_string(i));
    d.images.push_back(testing::random_tensor<float>({8, 8, 3}, 100 + static_cast<std::uint64_t>(i), 0.5));
    d.poses.push_back(i % 3);
  }
  return d;
}

TrainSettings tiny_settings(std::int64_t iterations) {
  TrainSettings s;
  s.iterations = iterations;
  s.batch_size = 3;
  s.adam.lr = 1e-3;
  s.seed = 21;
  return s;
}

bool same_params(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bitwise_equal(a.entries()[i].value, b.entries()[i].value)) return false;
  return true;
}

}  // namespace

TEST_CASE("an oracle denoiser has zero loss") {
  const auto schedule = make_schedule();
  const auto x0 = testing::random_tensor<double>({4, 8, 8, 3}, 1);
  const int poses[4] = {0, 1, 2, 0};
  const auto draw = draw_noise(x0, schedule, 5);
  DenoiseFn<double> oracle = [&](const Var<double>& x, std::span<const int> t, std::span<const int>) {
    CHECK(bitwise_equal(x.value(), draw.noisy));
    CHECK(std::vector<int>(t.begin(), t.end()) == draw.timesteps);
    return Var<double>::constant(draw.noise);
  };
  CHECK(ddpm_loss(oracle, x0, poses, schedule, 5).value().item() == 0.0);

  DenoiseFn<double> zero = [](const Var<double>& x, std::span<const int>, std::span<const int>) {
    return Var<double>::constant(Tensor<double>(x.shape()));
  };
  const double l = ddpm_loss(zero, x0, poses, schedule, 5).value().item();
  CHECK(l == doctest::Approx(draw.noise.array().square().mean()).epsilon(1e-12));
}

TEST_CASE("noise draws are seeded and in range") {
  const auto schedule = make_schedule();
  const auto x0 = testing::random_tensor<float>({64, 2, 2, 1}, 1);
  const auto a = draw_noise(x0, schedule, 8), b = draw_noise(x0, schedule, 8), c = draw_noise(x0, schedule, 9);
  CHECK(a.timesteps == b.timesteps);
  CHECK(bitwise_equal(a.noisy, b.noisy));
  CHECK(a.timesteps != c.timesteps);
  for (int t : a.timesteps) CHECK((t >= 0 && t < 1000));
}

TEST_CASE("freshly initialized model predicts roughly zero") {
  const auto cfg = tiny_unet();
  const auto p = init_unet_parameters(cfg, 1);
  BoundParameters<float> b(p, false);
  const auto x0 = testing::random_tensor<float>({8, 8, 8, 3}, 2, 0.5);
  const int poses[8] = {0, 1, 2, 0, 1, 2, 0, 1};
  const double loss = ddpm_loss(cfg, b, x0, poses, make_schedule(), 3).value().item();
  CHECK(loss == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("batches cover each epoch exactly once") {
  std::multiset<int> seen;
  for (int step = 0; step < 5; ++step)
    for (int i : batch_indices(step, 4, 20, 3)) seen.insert(i);
  CHECK(seen.size() == 20);
  for (int i = 0; i < 20; ++i) CHECK(seen.count(i) == 1);
  CHECK(batch_indices(7, 4, 20, 3) == batch_indices(7, 4, 20, 3));
  CHECK(batch_indices(7, 4, 20, 3) != batch_indices(7, 4, 20, 4));
}

TEST_CASE("training is deterministic and resumable") {
  const auto cfg = tiny_unet();
  const auto data = tiny_data(5);
  const auto schedule = make_schedule();

  auto straight = make_checkpoint(cfg, schedule, 4);
  std::vector<double> losses;
  train(straight, data, tiny_settings(6), {[&](std::int64_t, double l) { losses.push_back(l); }, {}});
  CHECK(straight.step == 6);
  CHECK(losses.size() == 6);

  auto again = make_checkpoint(cfg, schedule, 4);
  train(again, data, tiny_settings(6));
  CHECK(same_params(straight.params, again.params));

  auto first = make_checkpoint(cfg, schedule, 4);
  train(first, data, tiny_settings(3));
  auto resumed = decode_checkpoint(encode_checkpoint(first));
  train(resumed, data, tiny_settings(6));
  CHECK(resumed.step == 6);
  CHECK(same_params(straight.params, resumed.params));

  auto idle = make_checkpoint(cfg, schedule, 4);
  const auto before = idle.params;
  train(idle, data, tiny_settings(0));
  CHECK(idle.step == 0);
  CHECK(same_params(before, idle.params));
}

TEST_CASE("non-finite data stops training with the step") {
  const auto cfg = tiny_unet();
  auto data = tiny_data(3);
  data.images[1][0] = std::numeric_limits<float>::quiet_NaN();
  auto ckpt = make_checkpoint(cfg, make_schedule(), 4);
  try {
    train(ckpt, data, tiny_settings(4));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.step == 1);
  }
}

TEST_CASE("training input errors") {
  const auto cfg = tiny_unet();
  auto ckpt = make_checkpoint(cfg, make_schedule(), 4);
  CHECK_THROWS_AS(train(ckpt, TrainingData{}, tiny_settings(1)), std::invalid_argument);
  auto data = tiny_data(3);
  data.poses[0] = 7;
  CHECK_THROWS_AS(train(ckpt, data, tiny_settings(1)), std::invalid_argument);
  data = tiny_data(3);
  data.images[2] = Tensor<float>({4, 4, 3});
  CHECK_THROWS_AS(train(ckpt, data, tiny_settings(1)), std::invalid_argument);
}

TEST_CASE("smoothing window") {
  const std::vector<double> v{1, 2, 3, 4, 5};
  const auto s = smoothed(v, 2);
  CHECK(s == std::vector<double>{1, 1.5, 2.5, 3.5, 4.5});
}
