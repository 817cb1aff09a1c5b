#pragma once

// Differentiable forward ops. Image-like tensors are channels-last
// ([batch, height, width, channels]); convolution weights are
// [kernel, kernel, in_channels, out_channels].

#include "mvgen/autograd.hpp"

#include <span>

namespace mvgen {

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);

// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape);

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a);

template <typename Scalar>
Var<Scalar> mean_squared_error(const Var<Scalar>& prediction, const Var<Scalar>& target);

// [m, k] x [k, n] -> [m, n]
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);

// x: [..., in], weight: [in, out], bias: [out] -> [..., out]
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
};

// x: [B, H, W, Cin], weight: [k, k, Cin, Cout], bias: [Cout].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   Conv2dOptions options = {});

// Normalizes each (batch item, channel group) over all positions, then applies
// the per-channel affine gamma/beta. x: [B, ..., C].
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, Index groups, const Var<Scalar>& gamma,
                       const Var<Scalar>& beta, Scalar eps = Scalar(1e-5));

// x * (1 + scale) + shift with scale/shift of shape [B, C] broadcast over
// the positions of x: [B, ..., C].
template <typename Scalar>
Var<Scalar> modulate(const Var<Scalar>& x, const Var<Scalar>& scale, const Var<Scalar>& shift);

// x: [B, ..., C] plus a per-item vector [B, C].
template <typename Scalar>
Var<Scalar> add_per_item(const Var<Scalar>& x, const Var<Scalar>& v);

// Softmax over the last axis, stabilized by subtracting the row maximum.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> nearest_upsample(const Var<Scalar>& x, Index factor);

template <typename Scalar>
Var<Scalar> avgpool_downsample(const Var<Scalar>& x, Index factor);

// Concatenation along the last axis.
template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b);

// Row gather from table [m, d] -> [ids.size(), d].
template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const int> ids);

// Softmax attention per batch item. q: [B, n, d], k and v: [B, n', d].
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v);

}  // namespace mvgen
