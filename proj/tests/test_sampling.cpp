#include "helpers.hpp"
#include "tiny.hpp"

#include "mvgen/sampling.hpp"

#include <doctest.h>

#include <cmath>

using namespace mvgen;
using testing::tiny_unet;

namespace {

Tensor<double> scalar(double v) { return Tensor<double>::scalar(v); }

SamplerConfig quick(int steps, double gamma) {
  SamplerConfig c;
  c.steps = steps;
  c.gamma = gamma;
  return c;
}

}  // namespace

TEST_CASE("timestep subsequence") {
  const auto ts = uniform_timesteps(1000, 50);
  REQUIRE(ts.size() == 50);
  CHECK(ts.front() == 0);
  CHECK(ts[1] == 20);
  CHECK(ts.back() == 980);
  CHECK(uniform_timesteps(1000, 1000).back() == 999);
  CHECK_THROWS_AS(uniform_timesteps(1000, 0), std::invalid_argument);
  CHECK_THROWS_AS(uniform_timesteps(1000, 1001), std::invalid_argument);
  SamplerConfig c;
  c.timesteps = {0, 10, 10};
  CHECK_THROWS_AS(c.subsequence(1000), std::invalid_argument);
  c.timesteps = {0, 10, 1000};
  CHECK_THROWS_AS(c.subsequence(1000), std::invalid_argument);
}

TEST_CASE("guidance strength is clamped") {
  CHECK(effective_gamma(1.5) == 1.5);
  CHECK(effective_gamma(-1.0) == 0.0);
  CHECK(effective_gamma(9.0) == 4.0);
  CHECK(effective_gamma(3.0) == 3.0);
}

TEST_CASE("hag_combine") {
  const auto soft = testing::random_tensor<float>({4, 4, 3}, 1);
  const auto hard = testing::random_tensor<float>({4, 4, 3}, 2);
  CHECK(bitwise_equal(hag_combine(soft, hard, 1.0), soft));
  CHECK(bitwise_equal(hag_combine(soft, hard, 0.0), hard));
  const auto g = hag_combine(soft, hard, 1.5);
  CHECK(g[3] == doctest::Approx(1.5 * soft[3] - 0.5 * hard[3]).epsilon(1e-6));
  CHECK_THROWS_AS(hag_combine(soft, Tensor<float>({2}), 1.5), std::invalid_argument);
}

TEST_CASE("ddim update examples") {
  CHECK(ddim_transfer(scalar(1.1), scalar(0.5), 0.64, 0.81).item() ==
        doctest::Approx(1.117944947177).epsilon(1e-11));
  CHECK(std::abs(ddim_transfer(scalar(1.1), scalar(0.5), 0.64, 0.81).item() - 1.11795) < 1e-5);

  // Equal coefficients: fixed point.
  CHECK(ddim_transfer(scalar(0.3), scalar(-0.7), 0.5, 0.5).item() == doctest::Approx(0.3).epsilon(1e-15));

  // Perfect denoiser lands on x0.
  const double x0 = -0.4, eps = 1.3;
  const double xt = 0.8 * x0 + 0.6 * eps;
  CHECK(std::abs(ddim_transfer(scalar(xt), scalar(eps), 0.64, 1.0).item() - x0) < 1e-15);

  const auto s = make_schedule();
  CHECK_THROWS_AS(ddim_step(scalar(1), scalar(0), 1000, 5, s), std::out_of_range);
  CHECK_THROWS_AS(ddim_step(scalar(1), scalar(0), 5, 5, s), std::out_of_range);
  CHECK_THROWS_AS(ddim_step(scalar(1), scalar(0), 5, -2, s), std::out_of_range);
  CHECK_THROWS_AS(ddim_step(scalar(1), Tensor<double>({2}), 5, 4, s), std::invalid_argument);
}

TEST_CASE("planted trajectory is recovered") {
  const auto s = make_schedule();
  const auto x0 = testing::random_tensor<double>({4, 4, 3}, 3, 0.8);
  const auto eps = testing::random_tensor<double>({4, 4, 3}, 4);
  const auto xT = forward_diffuse(x0, 999, eps, s);
  EpsFn<double> oracle = [&](const Tensor<double>&, int, int, const AttentionControl<double>&) { return eps; };
  const auto out = ddim_sample(oracle, s, xT, 0, uniform_timesteps(1000, 1000));
  CHECK(max_abs_diff(out.image, x0) < 1e-4);
  // The 50-step subsequence tops out at t = 980.
  const auto x980 = forward_diffuse(x0, 980, eps, s);
  CHECK(max_abs_diff(ddim_sample(oracle, s, x980, 0, uniform_timesteps(1000, 50)).image, x0) < 1e-4);
}

TEST_CASE("inverting with a zero denoiser only rescales") {
  const auto s = make_schedule();
  const auto x0 = testing::random_tensor<double>({4, 4, 3}, 5);
  EpsFn<double> zero = [](const Tensor<double>& x, int, int, const AttentionControl<double>&) {
    return Tensor<double>(x.shape());
  };
  const auto ts = uniform_timesteps(1000, 50);
  const auto inv = ddim_invert(zero, s, x0, 0, ts);
  Tensor<double> expect = x0;
  expect.array() *= std::sqrt(s.alpha_bar[980]);
  CHECK(max_abs_diff(inv.noise, expect) < 1e-12);
  CHECK(bitwise_equal(ddim_invert(zero, s, x0, 0, ts).noise, inv.noise));
  // And sampling undoes it exactly for this denoiser.
  CHECK(max_abs_diff(ddim_sample(zero, s, inv.noise, 0, ts).image, x0) < 1e-12);
}

TEST_CASE("ddim step is invertible for a linear denoiser") {
  const auto s = make_schedule();
  const auto diag = testing::random_tensor<double>({5, 5, 3}, 6, 0.3);
  const auto x = testing::random_tensor<double>({5, 5, 3}, 7);
  auto lin = [&](const Tensor<double>& v) { return Tensor<double>(v.shape(), diag.array() * v.array()); };
  for (auto [t, tp] : {std::pair{980, 960}, {500, 20}, {20, -1}}) {
    const double a = std::sqrt(s.alpha_bar_at(tp) / s.alpha_bar_at(t));
    const double b = std::sqrt(1 - s.alpha_bar_at(tp)) -
                     std::sqrt(s.alpha_bar_at(tp) * (1 - s.alpha_bar_at(t)) / s.alpha_bar_at(t));
    const auto y = ddim_step(x, lin(x), t, tp, s);
    const Tensor<double> back(x.shape(), y.array() / (a + b * diag.array()));
    CHECK(max_abs_diff(back, x) < 1e-10);
  }
}

TEST_CASE("sampling with the network") {
  const auto cfg = tiny_unet();
  const auto params = init_unet_parameters(cfg, 1);
  const auto s = make_schedule();
  const auto eps_fn = unet_denoiser(cfg, params);
  const auto noise = seeded_normal<float>({8, 8, 3}, 2);
  const auto ts = uniform_timesteps(1000, 50);

  const auto plain = ddim_sample(eps_fn, s, noise, 1, ts);
  CHECK(bitwise_equal(plain.image, ddim_sample(eps_fn, s, noise, 1, ts).image));

  const auto rec = ddim_sample(eps_fn, s, noise, 1, ts, SampleMode::record);
  CHECK(bitwise_equal(rec.image, plain.image));
  check_reference_kv(rec.kv, ts, cross_frame_layers(cfg));

  SUBCASE("self reference reproduces the trajectory") {
    const auto self = ddim_sample(eps_fn, s, noise, 1, ts, SampleMode::reference, &rec.kv, 1.0);
    CHECK(max_abs_diff(self.image, plain.image) < 1e-5f);
  }
  SUBCASE("gamma 1 is plain cross-frame attention") {
    int hard_calls = 0;
    EpsFn<float> counting = [&](const Tensor<float>& x, int t, int p, const AttentionControl<float>& c) {
      hard_calls += c.mode == AttentionMode::use_reference_kv_hard;
      return eps_fn(x, t, p, c);
    };
    const auto noise2 = seeded_normal<float>({8, 8, 3}, 3);
    const auto guided = ddim_sample(counting, s, noise2, 2, ts, SampleMode::reference, &rec.kv, 1.0);
    CHECK(hard_calls == 0);
    Tensor<float> x = noise2;
    for (std::size_t i = ts.size(); i-- > 0;) {
      AttentionControl<float> c{AttentionMode::use_reference_kv, &rec.kv.at(ts[i])};
      x = ddim_step(x, eps_fn(x, ts[i], 2, c), ts[i], i == 0 ? -1 : ts[i - 1], s);
    }
    CHECK(bitwise_equal(guided.image, x));
    ddim_sample(counting, s, noise2, 2, ts, SampleMode::reference, &rec.kv, 1.5);
    CHECK(hard_calls == 50);
  }
  SUBCASE("missing reference timesteps are reported") {
    auto partial = rec.kv;
    partial.erase(ts[7]);
    CHECK_THROWS_AS(ddim_sample(eps_fn, s, noise, 1, ts, SampleMode::reference, &partial, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(check_reference_kv(partial, ts, cross_frame_layers(cfg)), std::invalid_argument);
    CHECK_THROWS_AS(ddim_sample(eps_fn, s, noise, 1, ts, SampleMode::reference, static_cast<const ReferenceKV<float>*>(nullptr), 1.0), std::invalid_argument);
  }
}

TEST_CASE("novel views") {
  const auto cfg = tiny_unet();
  const auto params = init_unet_parameters(cfg, 4);
  const auto s = make_schedule();
  ViewRequest req;
  req.reference_pose = 1;
  req.seed = 9;

  SUBCASE("target at the reference pose reproduces the reference") {
    req.targets = {1};
    const auto out = generate_novel_views(cfg, params, s, req, quick(20, 1.0));
    CHECK(max_abs_diff(out.views[0], out.reference) < 1e-4f);
  }
  SUBCASE("targets are independent of order and subset") {
    req.targets = {2, 0, 1};
    const auto all = generate_novel_views(cfg, params, s, req, quick(10, 1.5));
    req.targets = {0};
    const auto one = generate_novel_views(cfg, params, s, req, quick(10, 1.5));
    CHECK(bitwise_equal(all.views[1], one.views[0]));
    CHECK(bitwise_equal(all.reference, one.reference));
  }
  SUBCASE("independent noise") {
    req.targets = {0, 2};
    auto c = quick(10, 1.5);
    c.share_initial_noise = false;
    const auto out = generate_novel_views(cfg, params, s, req, c);
    CHECK(max_abs_diff(out.views[0], out.views[1]) > 0.0f);
    const auto shared = generate_novel_views(cfg, params, s, req, quick(10, 1.5));
    CHECK(max_abs_diff(out.views[0], shared.views[0]) > 0.0f);
  }
  SUBCASE("image reference") {
    req.reference_image = testing::random_tensor<float>({8, 8, 3}, 10, 0.3);
    req.targets = {0};
    const auto out = generate_novel_views(cfg, params, s, req, quick(10, 1.5));
    CHECK(out.views.size() == 1);
    CHECK(out.reference.all_finite());
  }
  SUBCASE("bad poses") {
    req.targets = {3};
    CHECK_THROWS_AS(generate_novel_views(cfg, params, s, req, quick(10, 1.5)), std::invalid_argument);
  }
}
