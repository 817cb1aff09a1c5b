#include "gradcheck.hpp"
#include "helpers.hpp"

#include "mvgen/attention.hpp"

#include <doctest.h>

using namespace mvgen;
using testing::gradcheck;
using testing::random_tensor;
using testing::weighted_sum;

namespace {

// Direct summation over the convolution definition.
Tensor<double> brute_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, Index stride,
                          Index pad) {
  const Index n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3), k = w.dim(0), cout = w.dim(3);
  const Index oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, oh, ow, cout});
  for (Index bi = 0; bi < n; ++bi)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index co = 0; co < cout; ++co) {
          double s = b[co];
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx)
              for (Index ci = 0; ci < cin; ++ci) {
                const Index iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                s += x[((bi * h + iy) * wd + ix) * cin + ci] * w[((ky * k + kx) * cin + ci) * cout + co];
              }
          y[((bi * oh + oy) * ow + ox) * cout + co] = s;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d 5x5 input, 3x3 kernel equals direct summation") {
  const auto x = random_tensor<double>({1, 5, 5, 2}, 1);
  const auto w = random_tensor<double>({3, 3, 2, 3}, 2);
  const auto b = random_tensor<double>({3}, 3);
  const auto y = conv2d(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b));
  CHECK(max_abs_diff(y.value(), brute_conv(x, w, b, 1, 0)) < 1e-5);
}

TEST_CASE("conv2d matches the definition on every small shape") {
  std::uint64_t seed = 10;
  for (Index h = 1; h <= 8; ++h)
    for (Index c = 1; c <= 4; ++c)
      for (Index k : {1, 3})
        for (Index stride : {1, 2})
          for (Index pad : {0, 1}) {
            if (h + 2 * pad < k) continue;
            const auto x = random_tensor<float>({2, h, h, c}, ++seed);
            const auto w = random_tensor<float>({k, k, c, 2}, ++seed);
            const auto b = random_tensor<float>({2}, ++seed);
            const auto y = conv2d(Var<float>::constant(x), Var<float>::constant(w), Var<float>::constant(b),
                                  {stride, pad});
            const auto ref = brute_conv(x.cast<double>(), w.cast<double>(), b.cast<double>(), stride, pad);
            CAPTURE(h);
            CAPTURE(c);
            REQUIRE(max_abs_diff(y.value().cast<double>(), ref) < 1e-5);
          }
}

TEST_CASE("softmax rows are stochastic and shift invariant") {
  auto x = random_tensor<double>({4, 7}, 5, 10.0);
  const auto p = softmax_rows(Var<double>::constant(x)).value();
  for (Index r = 0; r < 4; ++r) {
    double s = 0;
    for (Index c = 0; c < 7; ++c) {
      CHECK(p[r * 7 + c] >= 0);
      s += p[r * 7 + c];
    }
    CHECK(std::abs(s - 1) < 1e-6);
  }
  Tensor<double> shifted = x;
  for (Index c = 0; c < 7; ++c) shifted[7 + c] += 123.0;
  CHECK(max_abs_diff(softmax_rows(Var<double>::constant(shifted)).value(), p) < 1e-6);
  // Huge logits stay finite thanks to the max subtraction.
  Tensor<double> big = Tensor<double>::from_values({1, 2}, {1000.0, 999.0});
  CHECK(softmax_rows(Var<double>::constant(big)).value().all_finite());
}

TEST_CASE("group_norm normalizes each group before the affine map") {
  const auto x = random_tensor<double>({2, 3, 3, 8}, 6, 3.0);
  auto ones = Var<double>::constant(Tensor<double>::constant({8}, 1.0));
  auto zeros = Var<double>::constant(Tensor<double>({8}));
  const auto y = group_norm(Var<double>::constant(x), 4, ones, zeros).value();
  for (Index b = 0; b < 2; ++b)
    for (Index g = 0; g < 4; ++g) {
      double s = 0, ss = 0;
      int n = 0;
      for (Index p = 0; p < 9; ++p)
        for (Index c = 2 * g; c < 2 * g + 2; ++c) {
          const double v = y[(b * 9 + p) * 8 + c];
          s += v;
          ss += v * v;
          ++n;
        }
      CHECK(std::abs(s / n) < 1e-5);
      CHECK(std::abs(ss / n - 1.0) < 1e-4);
    }
  CHECK_THROWS_AS(group_norm(Var<double>::constant(x), 3, ones, zeros), std::invalid_argument);
}

TEST_CASE("shape errors are reported") {
  auto a = Var<float>::constant(Tensor<float>({2, 3}));
  auto b = Var<float>::constant(Tensor<float>({3, 2}));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(reshape(a, {4}), std::invalid_argument);
  auto x = Var<float>::constant(Tensor<float>({1, 4, 4, 2}));
  auto w = Var<float>::constant(Tensor<float>({3, 3, 3, 2}));
  CHECK_THROWS_AS(conv2d(x, w, Var<float>::constant(Tensor<float>({2}))), std::invalid_argument);
  CHECK_THROWS_AS(avgpool_downsample(Var<float>::constant(Tensor<float>({1, 3, 3, 1})), 2), std::invalid_argument);
  const int bad[1] = {5};
  CHECK_THROWS_AS(embedding(Var<float>::constant(Tensor<float>({4, 2})), bad), std::out_of_range);
}

TEST_CASE("resampling ops on known values") {
  auto x = Var<double>::constant(Tensor<double>::from_values({1, 2, 2, 1}, {1, 2, 3, 4}));
  const auto up = nearest_upsample(x, 2).value();
  CHECK(up.shape() == Shape{1, 4, 4, 1});
  CHECK(up[0] == 1);
  CHECK(up[1] == 1);
  CHECK(up[2] == 2);
  CHECK(up[15] == 4);
  const auto down = avgpool_downsample(x, 2).value();
  CHECK(down.size() == 1);
  CHECK(down[0] == doctest::Approx(2.5));
  const auto cat = concat_channels(x, x).value();
  CHECK(cat.shape() == Shape{1, 2, 2, 2});
  CHECK(cat[6] == 4);
  CHECK(cat[7] == 4);
}

TEST_CASE("ops are bitwise deterministic") {
  const auto x = random_tensor<float>({2, 8, 8, 4}, 1);
  const auto w = random_tensor<float>({3, 3, 4, 4}, 2);
  const auto b = random_tensor<float>({4}, 3);
  auto run = [&] {
    auto h = conv2d(Var<float>::constant(x), Var<float>::constant(w), Var<float>::constant(b), {1, 1});
    return silu(group_norm(h, 2, Var<float>::constant(Tensor<float>::constant({4}, 1.f)), Var<float>::constant(b)))
        .value();
  };
  CHECK(bitwise_equal(run(), run()));
}

TEST_CASE("per-op gradients match finite differences") {
  SUBCASE("matmul") {
    CHECK(gradcheck([](const auto& v) { return weighted_sum(matmul(v[0], v[1]), 1); },
                    {random_tensor<double>({3, 4}, 1), random_tensor<double>({4, 2}, 2)}) < 1e-4);
  }
  SUBCASE("conv2d stride 2") {
    CHECK(gradcheck([](const auto& v) { return weighted_sum(conv2d(v[0], v[1], v[2], {2, 1}), 2); },
                    {random_tensor<double>({2, 5, 5, 2}, 3), random_tensor<double>({3, 3, 2, 3}, 4),
                     random_tensor<double>({3}, 5)}) < 1e-4);
  }
  SUBCASE("group_norm") {
    CHECK(gradcheck([](const auto& v) { return weighted_sum(group_norm(v[0], 2, v[1], v[2]), 3); },
                    {random_tensor<double>({2, 3, 3, 4}, 6), random_tensor<double>({4}, 7),
                     random_tensor<double>({4}, 8)}) < 1e-4);
  }
  SUBCASE("attention") {
    CHECK(gradcheck([](const auto& v) { return weighted_sum(attention(v[0], v[1], v[2]), 4); },
                    {random_tensor<double>({2, 5, 3}, 9), random_tensor<double>({2, 4, 3}, 10),
                     random_tensor<double>({2, 4, 3}, 11)}) < 1e-4);
  }
  SUBCASE("embedding") {
    const int ids[3] = {2, 0, 2};
    CHECK(gradcheck([&](const auto& v) { return weighted_sum(embedding(v[0], ids), 5); },
                    {random_tensor<double>({3, 4}, 12)}) < 1e-4);
  }
  SUBCASE("mean_squared_error") {
    CHECK(gradcheck([](const auto& v) { return mean_squared_error(v[0], v[1]); },
                    {random_tensor<double>({2, 3}, 13), random_tensor<double>({2, 3}, 14)}) < 1e-4);
  }
  SUBCASE("concat and modulate") {
    CHECK(gradcheck(
              [](const auto& v) { return weighted_sum(modulate(concat_channels(v[0], v[0]), v[1], v[2]), 6); },
              {random_tensor<double>({2, 2, 2, 2}, 15), random_tensor<double>({2, 4}, 16),
               random_tensor<double>({2, 4}, 17)}) < 1e-4);
  }
}

TEST_CASE("cross-frame attention examples") {
  using M = RowMatrix<double>;
  M q(1, 1), k(2, 1), v(2, 1);
  q << 0;
  k << 1, -1;
  v << 2, 4;
  CHECK(cross_frame_attention<double>(q, k, v)(0, 0) == doctest::Approx(3.0).epsilon(1e-12));

  const M q2 = M::Random(5, 3);
  const M k1 = M::Random(1, 3), v1 = M::Random(1, 3);
  const M out = cross_frame_attention<double>(q2, k1, v1);
  for (Index r = 0; r < 5; ++r) CHECK((out.row(r) - v1.row(0)).norm() == 0.0);

  // Self reference is plain self-attention.
  const M x = M::Random(6, 4);
  auto self = attention(Var<double>::constant(Tensor<double>({1, 6, 4}, Eigen::Map<const Eigen::ArrayXd>(x.data(), 24))),
                        Var<double>::constant(Tensor<double>({1, 6, 4}, Eigen::Map<const Eigen::ArrayXd>(x.data(), 24))),
                        Var<double>::constant(Tensor<double>({1, 6, 4}, Eigen::Map<const Eigen::ArrayXd>(x.data(), 24))));
  const M cfa = cross_frame_attention<double>(x, x, x);
  CHECK((cfa - self.value().matrix(6, 4)).cwiseAbs().maxCoeff() < 1e-6);

  M bad(2, 2);
  CHECK_THROWS_AS(cross_frame_attention<double>(q, bad, bad), std::invalid_argument);
}

TEST_CASE("hard attention gathers reference rows") {
  using M = RowMatrix<double>;
  M q(1, 1), k(2, 1), v(2, 1);
  q << 1;
  k << 0.9, 1.1;
  v << 5, 7;
  CHECK(hard_attention<double>(q, k, v)(0, 0) == 7.0);

  M tie_q = M::Zero(3, 2), tie_k = M::Random(4, 2), tie_v = M::Random(4, 2);
  const M tied = hard_attention<double>(tie_q, tie_k, tie_v);
  for (Index r = 0; r < 3; ++r) CHECK(tied.row(r) == tie_v.row(0));

  const M qr = M::Random(10, 3), kr = M::Random(6, 3), vr = M::Random(6, 3);
  const M out = hard_attention<double>(qr, kr, vr);
  for (Index r = 0; r < 10; ++r) {
    bool member = false;
    for (Index j = 0; j < 6; ++j) member = member || out.row(r) == vr.row(j);
    CHECK(member);
  }
}
