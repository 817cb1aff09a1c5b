#include "helpers.hpp"
#include "tiny.hpp"

#include "mvgen/checkpoint.hpp"
#include "mvgen/io/binary.hpp"
#include "mvgen/training.hpp"

#include <doctest.h>

#include <set>

using namespace mvgen;
using testing::tiny_unet;

namespace {

Tensor<float> run(const UNetConfig& cfg, const ParameterSet<float>& p, const Tensor<float>& x, std::vector<int> t,
                  std::vector<int> poses, const AttentionControl<float>& control = {}) {
  BoundParameters<float> bound(p, false);
  return unet_forward(cfg, bound, Var<float>::constant(x), t, poses, control).value();
}

}  // namespace

TEST_CASE("timestep features") {
  const int t[1] = {10};
  const auto f = timestep_features<double>(t, 4);
  CHECK(f[0] == doctest::Approx(-0.544021111).epsilon(1e-8));
  CHECK(f[1] == doctest::Approx(0.000999999833).epsilon(1e-8));
  CHECK(f[2] == doctest::Approx(-0.839071529).epsilon(1e-8));
  CHECK(f[3] == doctest::Approx(0.9999995).epsilon(1e-8));
}

TEST_CASE("parameter registry") {
  const auto cfg = tiny_unet();
  const auto specs = unet_parameter_specs(cfg);
  std::set<std::string> names;
  for (const auto& s : specs) CHECK(names.insert(s.name).second);
  const auto p = init_unet_parameters(cfg, 1);
  CHECK(p.size() == specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) CHECK(p.entries()[i].value.shape() == specs[i].shape);
  CHECK(p["pose_embedding"].shape() == Shape{3, 8});

  const auto layers = cross_frame_layers(cfg);
  CHECK(layers.front() == "mid.attn");
  for (const auto& l : layers) CHECK(l.rfind("down.", 0) != 0);

  const auto q = init_unet_parameters(cfg, 1), r = init_unet_parameters(cfg, 2);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(bitwise_equal(p.entries()[i].value, q.entries()[i].value));
  CHECK_FALSE(bitwise_equal(p["conv_in.weight"], r["conv_in.weight"]));
}

TEST_CASE("output gate starts closed and passes the input through") {
  const auto cfg = tiny_unet();
  auto p = init_unet_parameters(cfg, 3);
  CHECK(p["out.gate.weight"].array().abs().maxCoeff() == 0.0f);
  CHECK(p["out.gate.bias"].array().abs().maxCoeff() == 0.0f);

  // Silence the conv stack and open the gate halfway: output = x / 2.
  p["out.conv.weight"].array().setZero();
  p["out.conv.bias"].array().setZero();
  p["out.gate.bias"].array().setConstant(0.5f);
  const auto x = testing::random_tensor<float>({2, 8, 8, 3}, 4);
  Tensor<float> half = x;
  half.array() *= 0.5f;
  CHECK(max_abs_diff(run(cfg, p, x, {5, 900}, {0, 2}), half) < 1e-6f);
}

TEST_CASE("config validation") {
  auto cfg = tiny_unet();
  cfg.image_size = 7;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_unet();
  cfg.groupnorm_groups = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_unet();
  cfg.channel_multipliers.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("forward pass shape, determinism and conditioning") {
  const auto cfg = tiny_unet();
  const auto p = init_unet_parameters(cfg, 3);
  const auto x = testing::random_tensor<float>({2, 8, 8, 3}, 4);
  const auto a = run(cfg, p, x, {5, 500}, {0, 1});
  CHECK(a.shape() == x.shape());
  CHECK(a.all_finite());
  CHECK(bitwise_equal(a, run(cfg, p, x, {5, 500}, {0, 1})));

  // Pose and timestep both change the output.
  CHECK(max_abs_diff(a, run(cfg, p, x, {5, 500}, {2, 1})) > 1e-6f);
  CHECK(max_abs_diff(a, run(cfg, p, x, {6, 500}, {0, 1})) > 1e-6f);

  // Items are independent: swapping the batch swaps the outputs.
  Tensor<float> swapped(x.shape());
  const Index n = 8 * 8 * 3;
  swapped.array().head(n) = x.array().tail(n);
  swapped.array().tail(n) = x.array().head(n);
  const auto b = run(cfg, p, swapped, {500, 5}, {1, 0});
  CHECK((b.array().head(n) - a.array().tail(n)).abs().maxCoeff() < 1e-5f);
  CHECK((b.array().tail(n) - a.array().head(n)).abs().maxCoeff() < 1e-5f);
}

TEST_CASE("input validation") {
  const auto cfg = tiny_unet();
  const auto p = init_unet_parameters(cfg, 3);
  CHECK_THROWS_AS(run(cfg, p, Tensor<float>({1, 4, 4, 3}), {0}, {0}), std::invalid_argument);
  CHECK_THROWS_AS(run(cfg, p, Tensor<float>({1, 8, 8, 3}), {0, 1}, {0}), std::invalid_argument);
  CHECK_THROWS_AS(run(cfg, p, Tensor<float>({1, 8, 8, 3}), {0}, {3}), std::out_of_range);
  AttentionControl<float> rec{AttentionMode::record_kv};
  CHECK_THROWS_AS(run(cfg, p, Tensor<float>({1, 8, 8, 3}), {0}, {0}, rec), std::invalid_argument);
}

TEST_CASE("self-referenced cross-frame attention is self-attention") {
  const auto cfg = tiny_unet();
  const auto p = init_unet_parameters(cfg, 5);
  const auto x = testing::random_tensor<float>({1, 8, 8, 3}, 6);
  LayerKv<float> kv;
  AttentionControl<float> rec{AttentionMode::record_kv, nullptr, &kv};
  const auto recorded = run(cfg, p, x, {300}, {1}, rec);
  CHECK(kv.size() == cross_frame_layers(cfg).size());
  const auto plain = run(cfg, p, x, {300}, {1});
  CHECK(bitwise_equal(recorded, plain));
  AttentionControl<float> ref{AttentionMode::use_reference_kv, &kv};
  CHECK(max_abs_diff(run(cfg, p, x, {300}, {1}, ref), plain) < 1e-6f);

  AttentionControl<float> hard{AttentionMode::use_reference_kv_hard, &kv};
  CHECK(run(cfg, p, x, {300}, {1}, hard).all_finite());
  LayerKv<float> partial = kv;
  partial.erase(partial.begin());
  AttentionControl<float> bad{AttentionMode::use_reference_kv, &partial};
  CHECK_THROWS_AS(run(cfg, p, x, {300}, {1}, bad), std::invalid_argument);
}

TEST_CASE("loss gradient matches finite differences in every parameter group") {
  const auto cfg = tiny_unet();
  const auto params = init_unet_parameters(cfg, 7).cast<double>();
  const auto schedule = make_schedule();
  const auto x0 = testing::random_tensor<double>({2, 8, 8, 3}, 8, 0.5);
  const int poses[2] = {0, 2};
  auto loss_at = [&](const ParameterSet<double>& ps) {
    BoundParameters<double> b(ps, false);
    return ddpm_loss(cfg, b, x0, poses, schedule, 9).value().item();
  };
  BoundParameters<double> bound(params, true);
  const auto grads = bound.gradients(backward(ddpm_loss(cfg, bound, x0, poses, schedule, 9)));
  NormalStream pick(10);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = params.entries()[i];
    for (int trial = 0; trial < 2; ++trial) {
      const Index j = static_cast<Index>(pick.uniform() * static_cast<double>(entry.value.size()));
      auto plus = params, minus = params;
      const double h = 1e-5;
      plus.entries()[i].value[j] += h;
      minus.entries()[i].value[j] -= h;
      const double numeric = (loss_at(plus) - loss_at(minus)) / (2 * h);
      const double analytic = grads[i][j];
      CAPTURE(entry.name);
      CHECK(std::abs(analytic - numeric) <= 1e-3 * std::max(std::abs(numeric), 1e-4));
    }
  }
}

TEST_CASE("checkpoint round trip") {
  const auto cfg = tiny_unet();
  auto ckpt = make_checkpoint(cfg, make_schedule(100, 1e-4, 0.02), 11);
  ckpt.step = 42;
  ckpt.optimizer = AdamState<float>{};
  for (const auto& e : ckpt.params.entries()) {
    ckpt.optimizer->first_moment.push_back(Tensor<float>::constant(e.value.shape(), 0.5f));
    ckpt.optimizer->second_moment.push_back(Tensor<float>::constant(e.value.shape(), 0.25f));
  }
  ckpt.optimizer->step = 42;
  const std::string bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.config == cfg);
  CHECK(back.step == 42);
  CHECK(back.schedule.steps == 100);
  REQUIRE(back.optimizer);
  CHECK(back.optimizer->step == 42);
  for (std::size_t i = 0; i < ckpt.params.size(); ++i)
    CHECK(bitwise_equal(back.params.entries()[i].value, ckpt.params.entries()[i].value));
  CHECK(encode_checkpoint(back) == bytes);

  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), io::FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), io::FormatError);
}
