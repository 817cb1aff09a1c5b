#include "mvgen/ops.hpp"

#include "mvgen/attention.hpp"

#include <cmath>
#include <cstring>

namespace mvgen {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

// Positions per batch item for a channels-last tensor [B, ..., C].
Index positions_per_item(const Shape& s) {
  Index n = 1;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

template <typename Scalar>
bool wants(const Node<Scalar>& n, std::size_t i) {
  return n.parents[i]->requires_grad;
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
  return record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(Tensor<Scalar>(self.grad));
    if (wants(self, 1)) self.parents[1]->accumulate(Tensor<Scalar>(self.grad));
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Scalar> out(a.shape(), a.value().array() - b.value().array());
  return record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(Tensor<Scalar>(self.grad));
    if (wants(self, 1)) {
      self.parents[1]->accumulate(Tensor<Scalar>(self.grad.shape(), -self.grad.array()));
    }
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
  return record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->accumulate(Tensor<Scalar>(av.shape(), self.grad.array() * bv.array()));
    if (wants(self, 1)) self.parents[1]->accumulate(Tensor<Scalar>(bv.shape(), self.grad.array() * av.array()));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.value().array() * factor);
  return record<Scalar>(std::move(out), {a}, [factor](Node<Scalar>& self) {
    self.parents[0]->accumulate(Tensor<Scalar>(self.grad.shape(), self.grad.array() * factor));
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  Tensor<Scalar> out = a.value().reshaped(std::move(shape));
  return record<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad.reshaped(self.parents[0]->value.shape()));
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.value().array().sum());
  return record<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(Tensor<Scalar>::constant(self.parents[0]->value.shape(), self.grad[0]));
  });
}

template <typename Scalar>
Var<Scalar> mean_squared_error(const Var<Scalar>& prediction, const Var<Scalar>& target) {
  require_same_shape(prediction.shape(), target.shape(), "mean_squared_error");
  const Index n = prediction.size();
  Tensor<Scalar> diff(prediction.shape(), prediction.value().array() - target.value().array());
  Tensor<Scalar> out = Tensor<Scalar>::scalar(diff.array().square().sum() / static_cast<Scalar>(n));
  return record<Scalar>(std::move(out), {prediction, target},
                        [diff = std::move(diff), n](Node<Scalar>& self) {
                          const Scalar g = self.grad[0] * Scalar(2) / static_cast<Scalar>(n);
                          if (wants(self, 0)) self.parents[0]->accumulate(Tensor<Scalar>(diff.shape(), diff.array() * g));
                          if (wants(self, 1)) self.parents[1]->accumulate(Tensor<Scalar>(diff.shape(), diff.array() * -g));
                        });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: operands must be rank 2");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimension mismatch " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
  Tensor<Scalar> out({m, n});
  out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  return record<Scalar>(std::move(out), {a, b}, [m, k, n](Node<Scalar>& self) {
    const auto g = self.grad.matrix(m, n);
    if (wants(self, 0)) {
      Tensor<Scalar> ga({m, k});
      ga.matrix(m, k).noalias() = g * self.parents[1]->value.matrix(k, n).transpose();
      self.parents[0]->accumulate(std::move(ga));
    }
    if (wants(self, 1)) {
      Tensor<Scalar> gb({k, n});
      gb.matrix(k, n).noalias() = self.parents[0]->value.matrix(m, k).transpose() * g;
      self.parents[1]->accumulate(std::move(gb));
    }
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  require(weight.shape().size() == 2, "linear: weight must be [in, out]");
  const Index in = weight.dim(0), out_dim = weight.dim(1);
  require(x.shape().back() == in, "linear: input features " + std::to_string(x.shape().back()) +
                                      " != weight rows " + std::to_string(in));
  require(bias.shape() == Shape{out_dim}, "linear: bias must be [out]");
  const Index rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor<Scalar> out(out_shape);
  auto y = out.matrix(rows, out_dim);
  y.noalias() = x.value().matrix(rows, in) * weight.value().matrix(in, out_dim);
  y.rowwise() += bias.value().matrix(1, out_dim).row(0);
  return record<Scalar>(std::move(out), {x, weight, bias}, [rows, in, out_dim](Node<Scalar>& self) {
    const auto g = self.grad.matrix(rows, out_dim);
    if (wants(self, 0)) {
      Tensor<Scalar> gx(self.parents[0]->value.shape());
      gx.matrix(rows, in).noalias() = g * self.parents[1]->value.matrix(in, out_dim).transpose();
      self.parents[0]->accumulate(std::move(gx));
    }
    if (wants(self, 1)) {
      Tensor<Scalar> gw({in, out_dim});
      gw.matrix(in, out_dim).noalias() = self.parents[0]->value.matrix(rows, in).transpose() * g;
      self.parents[1]->accumulate(std::move(gw));
    }
    if (wants(self, 2)) {
      Tensor<Scalar> gb({out_dim});
      gb.matrix(1, out_dim) = g.colwise().sum();
      self.parents[2]->accumulate(std::move(gb));
    }
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   Conv2dOptions options) {
  require(x.shape().size() == 4, "conv2d: input must be [B, H, W, C]");
  require(weight.shape().size() == 4 && weight.dim(0) == weight.dim(1),
          "conv2d: weight must be [k, k, Cin, Cout]");
  require(options.stride >= 1 && options.padding >= 0, "conv2d: invalid stride/padding");
  const Index batch = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const Index ks = weight.dim(0), cout = weight.dim(3);
  require(weight.dim(2) == cin, "conv2d: weight expects " + std::to_string(weight.dim(2)) +
                                    " input channels, got " + std::to_string(cin));
  require(bias.shape() == Shape{cout}, "conv2d: bias must be [Cout]");
  const Index stride = options.stride, pad = options.padding;
  require(h + 2 * pad >= ks && w + 2 * pad >= ks, "conv2d: kernel larger than padded input");
  const Index oh = (h + 2 * pad - ks) / stride + 1;
  const Index ow = (w + 2 * pad - ks) / stride + 1;
  const Index rows = batch * oh * ow;
  const Index kdim = ks * ks * cin;

  // im2col: one row per output pixel, columns ordered (ky, kx, cin).
  RowMatrix<Scalar> col(rows, kdim);
  const Scalar* xs = x.value().data();
  for (Index b = 0; b < batch; ++b) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar* dst = col.data() + ((b * oh + oy) * ow + ox) * kdim;
        for (Index ky = 0; ky < ks; ++ky) {
          const Index iy = oy * stride - pad + ky;
          for (Index kx = 0; kx < ks; ++kx) {
            const Index ix = ox * stride - pad + kx;
            Scalar* cell = dst + (ky * ks + kx) * cin;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
              std::fill(cell, cell + cin, Scalar(0));
            } else {
              std::memcpy(cell, xs + ((b * h + iy) * w + ix) * cin, sizeof(Scalar) * cin);
            }
          }
        }
      }
    }
  }

  Tensor<Scalar> out({batch, oh, ow, cout});
  auto y = out.matrix(rows, cout);
  y.noalias() = col * weight.value().matrix(kdim, cout);
  y.rowwise() += bias.value().matrix(1, cout).row(0);

  return record<Scalar>(
      std::move(out), {x, weight, bias},
      [col = std::move(col), batch, h, w, cin, ks, cout, stride, pad, oh, ow, rows, kdim](Node<Scalar>& self) {
        const auto g = self.grad.matrix(rows, cout);
        if (wants(self, 1)) {
          Tensor<Scalar> gw(self.parents[1]->value.shape());
          gw.matrix(kdim, cout).noalias() = col.transpose() * g;
          self.parents[1]->accumulate(std::move(gw));
        }
        if (wants(self, 2)) {
          Tensor<Scalar> gb({cout});
          gb.matrix(1, cout) = g.colwise().sum();
          self.parents[2]->accumulate(std::move(gb));
        }
        if (wants(self, 0)) {
          RowMatrix<Scalar> gcol(rows, kdim);
          gcol.noalias() = g * self.parents[1]->value.matrix(kdim, cout).transpose();
          Tensor<Scalar> gx(self.parents[0]->value.shape());
          Scalar* gxs = gx.data();
          for (Index b = 0; b < batch; ++b) {
            for (Index oy = 0; oy < oh; ++oy) {
              for (Index ox = 0; ox < ow; ++ox) {
                const Scalar* src = gcol.data() + ((b * oh + oy) * ow + ox) * kdim;
                for (Index ky = 0; ky < ks; ++ky) {
                  const Index iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (Index kx = 0; kx < ks; ++kx) {
                    const Index ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= w) continue;
                    Scalar* dst = gxs + ((b * h + iy) * w + ix) * cin;
                    const Scalar* cell = src + (ky * ks + kx) * cin;
                    for (Index c = 0; c < cin; ++c) dst[c] += cell[c];
                  }
                }
              }
            }
          }
          self.parents[0]->accumulate(std::move(gx));
        }
      });
}

template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, Index groups, const Var<Scalar>& gamma,
                       const Var<Scalar>& beta, Scalar eps) {
  require(x.shape().size() >= 2, "group_norm: input must be [B, ..., C]");
  const Index batch = x.dim(0), channels = x.shape().back();
  require(groups >= 1 && channels % groups == 0,
          "group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(channels) +
              " channels");
  require(gamma.shape() == Shape{channels} && beta.shape() == Shape{channels},
          "group_norm: gamma/beta must be [C]");
  const Index npos = positions_per_item(x.shape());
  const Index cg = channels / groups;
  const Scalar count = static_cast<Scalar>(npos * cg);

  Tensor<Scalar> xhat(x.shape());
  Tensor<Scalar> inv_std({batch, groups});
  const Scalar* xs = x.value().data();
  for (Index b = 0; b < batch; ++b) {
    for (Index g = 0; g < groups; ++g) {
      Scalar mean = 0;
      for (Index p = 0; p < npos; ++p) {
        const Scalar* row = xs + (b * npos + p) * channels + g * cg;
        for (Index c = 0; c < cg; ++c) mean += row[c];
      }
      mean /= count;
      Scalar var = 0;
      for (Index p = 0; p < npos; ++p) {
        const Scalar* row = xs + (b * npos + p) * channels + g * cg;
        for (Index c = 0; c < cg; ++c) var += (row[c] - mean) * (row[c] - mean);
      }
      var /= count;
      const Scalar istd = Scalar(1) / std::sqrt(var + eps);
      inv_std[b * groups + g] = istd;
      for (Index p = 0; p < npos; ++p) {
        const Index base = (b * npos + p) * channels + g * cg;
        for (Index c = 0; c < cg; ++c) xhat[base + c] = (xs[base + c] - mean) * istd;
      }
    }
  }

  Tensor<Scalar> out(x.shape());
  {
    const Index rows = batch * npos;
    auto y = out.matrix(rows, channels);
    y = xhat.matrix(rows, channels);
    y.array().rowwise() *= gamma.value().matrix(1, channels).row(0).array();
    y.rowwise() += beta.value().matrix(1, channels).row(0);
  }

  return record<Scalar>(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, npos, channels, groups, cg,
       count](Node<Scalar>& self) {
        const Index rows = batch * npos;
        const auto g = self.grad.matrix(rows, channels);
        const auto xh = xhat.matrix(rows, channels);
        if (wants(self, 1)) {
          Tensor<Scalar> gg({channels});
          gg.matrix(1, channels) = (g.array() * xh.array()).colwise().sum();
          self.parents[1]->accumulate(std::move(gg));
        }
        if (wants(self, 2)) {
          Tensor<Scalar> gb({channels});
          gb.matrix(1, channels) = g.colwise().sum();
          self.parents[2]->accumulate(std::move(gb));
        }
        if (wants(self, 0)) {
          const Scalar* gam = self.parents[1]->value.data();
          Tensor<Scalar> gx(self.parents[0]->value.shape());
          for (Index b = 0; b < batch; ++b) {
            for (Index grp = 0; grp < groups; ++grp) {
              Scalar mean_d = 0, mean_dx = 0;
              for (Index p = 0; p < npos; ++p) {
                const Index base = (b * npos + p) * channels + grp * cg;
                for (Index c = 0; c < cg; ++c) {
                  const Scalar d = self.grad[base + c] * gam[grp * cg + c];
                  mean_d += d;
                  mean_dx += d * xhat[base + c];
                }
              }
              mean_d /= count;
              mean_dx /= count;
              const Scalar istd = inv_std[b * groups + grp];
              for (Index p = 0; p < npos; ++p) {
                const Index base = (b * npos + p) * channels + grp * cg;
                for (Index c = 0; c < cg; ++c) {
                  const Scalar d = self.grad[base + c] * gam[grp * cg + c];
                  gx[base + c] = istd * (d - mean_d - xhat[base + c] * mean_dx);
                }
              }
            }
          }
          self.parents[0]->accumulate(std::move(gx));
        }
      });
}

template <typename Scalar>
Var<Scalar> modulate(const Var<Scalar>& x, const Var<Scalar>& scale_v, const Var<Scalar>& shift) {
  require(x.shape().size() >= 2, "modulate: input must be [B, ..., C]");
  const Index batch = x.dim(0), channels = x.shape().back();
  require(scale_v.shape() == Shape({batch, channels}) && shift.shape() == Shape({batch, channels}),
          "modulate: scale/shift must be [B, C]");
  const Index npos = positions_per_item(x.shape());
  Tensor<Scalar> out(x.shape());
  for (Index b = 0; b < batch; ++b) {
    auto xb = x.value().matrix(batch * npos, channels).middleRows(b * npos, npos);
    auto yb = out.matrix(batch * npos, channels).middleRows(b * npos, npos);
    const auto s = scale_v.value().matrix(batch, channels).row(b).array() + Scalar(1);
    const auto t = shift.value().matrix(batch, channels).row(b);
    yb = xb;
    yb.array().rowwise() *= s;
    yb.rowwise() += t;
  }
  return record<Scalar>(std::move(out), {x, scale_v, shift}, [batch, npos, channels](Node<Scalar>& self) {
    const Index rows = batch * npos;
    const auto g = self.grad.matrix(rows, channels);
    const auto xv = self.parents[0]->value.matrix(rows, channels);
    if (wants(self, 0)) {
      Tensor<Scalar> gx(self.parents[0]->value.shape());
      auto gxm = gx.matrix(rows, channels);
      const auto sv = self.parents[1]->value.matrix(batch, channels);
      for (Index b = 0; b < batch; ++b) {
        gxm.middleRows(b * npos, npos) = g.middleRows(b * npos, npos);
        gxm.middleRows(b * npos, npos).array().rowwise() *= (sv.row(b).array() + Scalar(1));
      }
      self.parents[0]->accumulate(std::move(gx));
    }
    if (wants(self, 1)) {
      Tensor<Scalar> gs({batch, channels});
      for (Index b = 0; b < batch; ++b) {
        gs.matrix(batch, channels).row(b) =
            (g.middleRows(b * npos, npos).array() * xv.middleRows(b * npos, npos).array()).colwise().sum();
      }
      self.parents[1]->accumulate(std::move(gs));
    }
    if (wants(self, 2)) {
      Tensor<Scalar> gt({batch, channels});
      for (Index b = 0; b < batch; ++b) {
        gt.matrix(batch, channels).row(b) = g.middleRows(b * npos, npos).colwise().sum();
      }
      self.parents[2]->accumulate(std::move(gt));
    }
  });
}

template <typename Scalar>
Var<Scalar> add_per_item(const Var<Scalar>& x, const Var<Scalar>& v) {
  require(x.shape().size() >= 2, "add_per_item: input must be [B, ..., C]");
  const Index batch = x.dim(0), channels = x.shape().back();
  require(v.shape() == Shape({batch, channels}), "add_per_item: vector must be [B, C]");
  const Index npos = positions_per_item(x.shape());
  Tensor<Scalar> out = x.value();
  auto y = out.matrix(batch * npos, channels);
  for (Index b = 0; b < batch; ++b) {
    y.middleRows(b * npos, npos).rowwise() += v.value().matrix(batch, channels).row(b);
  }
  return record<Scalar>(std::move(out), {x, v}, [batch, npos, channels](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(Tensor<Scalar>(self.grad));
    if (wants(self, 1)) {
      const auto g = self.grad.matrix(batch * npos, channels);
      Tensor<Scalar> gv({batch, channels});
      for (Index b = 0; b < batch; ++b) {
        gv.matrix(batch, channels).row(b) = g.middleRows(b * npos, npos).colwise().sum();
      }
      self.parents[1]->accumulate(std::move(gv));
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
  require(!x.shape().empty(), "softmax_rows: empty shape");
  const Index cols = x.shape().back();
  const Index rows = x.size() / cols;
  RowMatrix<Scalar> p = x.value().matrix(rows, cols);
  softmax_rows_inplace(p);
  Tensor<Scalar> out(x.shape());
  out.matrix(rows, cols) = p;
  return record<Scalar>(std::move(out), {x}, [rows, cols](Node<Scalar>& self) {
    // The node's own value is the softmax output.
    const auto pm = self.value.matrix(rows, cols);
    const auto g = self.grad.matrix(rows, cols);
    Tensor<Scalar> gx(self.value.shape());
    auto gxm = gx.matrix(rows, cols);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (g.array() * pm.array()).rowwise().sum();
    gxm = pm.array() * (g.array().colwise() - dots.array());
    self.parents[0]->accumulate(std::move(gx));
  });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& x) {
  const auto& xv = x.value().array();
  Tensor<Scalar> out(x.shape(), xv / (Scalar(1) + (-xv).exp()));
  return record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    const auto& xa = self.parents[0]->value.array();
    const auto s = Scalar(1) / (Scalar(1) + (-xa).exp());
    self.parents[0]->accumulate(
        Tensor<Scalar>(self.parents[0]->value.shape(),
                       self.grad.array() * s * (Scalar(1) + xa * (Scalar(1) - s))));
  });
}

template <typename Scalar>
Var<Scalar> nearest_upsample(const Var<Scalar>& x, Index factor) {
  require(x.shape().size() == 4, "nearest_upsample: input must be [B, H, W, C]");
  require(factor >= 1, "nearest_upsample: factor must be positive");
  const Index batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const Index oh = h * factor, ow = w * factor;
  Tensor<Scalar> out({batch, oh, ow, c});
  const Scalar* xs = x.value().data();
  for (Index b = 0; b < batch; ++b)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx)
        std::memcpy(out.data() + ((b * oh + y) * ow + xx) * c,
                    xs + ((b * h + y / factor) * w + xx / factor) * c, sizeof(Scalar) * c);
  return record<Scalar>(std::move(out), {x}, [batch, h, w, c, factor, oh, ow](Node<Scalar>& self) {
    Tensor<Scalar> gx(self.parents[0]->value.shape());
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          const Scalar* src = self.grad.data() + ((b * oh + y) * ow + xx) * c;
          Scalar* dst = gx.data() + ((b * h + y / factor) * w + xx / factor) * c;
          for (Index k = 0; k < c; ++k) dst[k] += src[k];
        }
    self.parents[0]->accumulate(std::move(gx));
  });
}

template <typename Scalar>
Var<Scalar> avgpool_downsample(const Var<Scalar>& x, Index factor) {
  require(x.shape().size() == 4, "avgpool_downsample: input must be [B, H, W, C]");
  const Index batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  require(factor >= 1 && h % factor == 0 && w % factor == 0,
          "avgpool_downsample: factor must divide spatial extents");
  const Index oh = h / factor, ow = w / factor;
  const Scalar norm = Scalar(1) / static_cast<Scalar>(factor * factor);
  Tensor<Scalar> out({batch, oh, ow, c});
  const Scalar* xs = x.value().data();
  for (Index b = 0; b < batch; ++b)
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx) {
        const Scalar* src = xs + ((b * h + y) * w + xx) * c;
        Scalar* dst = out.data() + ((b * oh + y / factor) * ow + xx / factor) * c;
        for (Index k = 0; k < c; ++k) dst[k] += src[k] * norm;
      }
  return record<Scalar>(std::move(out), {x}, [batch, h, w, c, factor, oh, ow, norm](Node<Scalar>& self) {
    Tensor<Scalar> gx(self.parents[0]->value.shape());
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) {
          const Scalar* src = self.grad.data() + ((b * oh + y / factor) * ow + xx / factor) * c;
          Scalar* dst = gx.data() + ((b * h + y) * w + xx) * c;
          for (Index k = 0; k < c; ++k) dst[k] = src[k] * norm;
        }
    self.parents[0]->accumulate(std::move(gx));
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  Shape sa = a.shape(), sb = b.shape();
  require(sa.size() == sb.size() && !sa.empty() &&
              std::equal(sa.begin(), sa.end() - 1, sb.begin()),
          "concat_channels: leading dims differ " + shape_string(sa) + " vs " + shape_string(sb));
  const Index ca = sa.back(), cb = sb.back(), rows = a.size() / ca;
  Shape so = sa;
  so.back() = ca + cb;
  Tensor<Scalar> out(so);
  auto y = out.matrix(rows, ca + cb);
  y.leftCols(ca) = a.value().matrix(rows, ca);
  y.rightCols(cb) = b.value().matrix(rows, cb);
  return record<Scalar>(std::move(out), {a, b}, [rows, ca, cb](Node<Scalar>& self) {
    const auto g = self.grad.matrix(rows, ca + cb);
    if (wants(self, 0)) {
      Tensor<Scalar> ga(self.parents[0]->value.shape());
      ga.matrix(rows, ca) = g.leftCols(ca);
      self.parents[0]->accumulate(std::move(ga));
    }
    if (wants(self, 1)) {
      Tensor<Scalar> gb(self.parents[1]->value.shape());
      gb.matrix(rows, cb) = g.rightCols(cb);
      self.parents[1]->accumulate(std::move(gb));
    }
  });
}

template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const int> ids) {
  require(table.shape().size() == 2, "embedding: table must be [m, d]");
  require(!ids.empty(), "embedding: no ids");
  const Index m = table.dim(0), d = table.dim(1), n = static_cast<Index>(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= m) {
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside [0, " +
                              std::to_string(m) + ")");
    }
  }
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor<Scalar> out({n, d});
  for (Index i = 0; i < n; ++i) out.matrix(n, d).row(i) = table.value().matrix(m, d).row(idx[i]);
  return record<Scalar>(std::move(out), {table}, [idx = std::move(idx), m, d, n](Node<Scalar>& self) {
    Tensor<Scalar> gt({m, d});
    for (Index i = 0; i < n; ++i) gt.matrix(m, d).row(idx[i]) += self.grad.matrix(n, d).row(i);
    self.parents[0]->accumulate(std::move(gt));
  });
}

template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v) {
  require(q.shape().size() == 3 && k.shape().size() == 3 && v.shape().size() == 3,
          "attention: q, k, v must be [B, n, d]");
  const Index batch = q.dim(0), n = q.dim(1), d = q.dim(2), nk = k.dim(1), dv = v.dim(2);
  require(k.dim(0) == batch && v.dim(0) == batch, "attention: batch mismatch");
  require(k.dim(2) == d, "attention: query/key dim mismatch");
  require(v.dim(1) == nk, "attention: key/value count mismatch");
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));

  std::vector<RowMatrix<Scalar>> probs(static_cast<std::size_t>(batch));
  Tensor<Scalar> out({batch, n, dv});
  for (Index b = 0; b < batch; ++b) {
    ConstMatrixMap<Scalar> qb(q.value().data() + b * n * d, n, d);
    ConstMatrixMap<Scalar> kb(k.value().data() + b * nk * d, nk, d);
    ConstMatrixMap<Scalar> vb(v.value().data() + b * nk * dv, nk, dv);
    RowMatrix<Scalar>& p = probs[static_cast<std::size_t>(b)];
    p.noalias() = (qb * kb.transpose()) * inv_sqrt_d;
    softmax_rows_inplace(p);
    MatrixMap<Scalar>(out.data() + b * n * dv, n, dv).noalias() = p * vb;
  }
  return record<Scalar>(
      std::move(out), {q, k, v},
      [probs = std::move(probs), batch, n, d, nk, dv, inv_sqrt_d](Node<Scalar>& self) {
        const Tensor<Scalar>& qv = self.parents[0]->value;
        const Tensor<Scalar>& kv = self.parents[1]->value;
        const Tensor<Scalar>& vv = self.parents[2]->value;
        Tensor<Scalar> gq(qv.shape()), gk(kv.shape()), gv(vv.shape());
        for (Index b = 0; b < batch; ++b) {
          const RowMatrix<Scalar>& p = probs[static_cast<std::size_t>(b)];
          ConstMatrixMap<Scalar> go(self.grad.data() + b * n * dv, n, dv);
          ConstMatrixMap<Scalar> qb(qv.data() + b * n * d, n, d);
          ConstMatrixMap<Scalar> kb(kv.data() + b * nk * d, nk, d);
          ConstMatrixMap<Scalar> vb(vv.data() + b * nk * dv, nk, dv);
          MatrixMap<Scalar>(gv.data() + b * nk * dv, nk, dv).noalias() = p.transpose() * go;
          RowMatrix<Scalar> dp = go * vb.transpose();
          const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (dp.array() * p.array()).rowwise().sum();
          RowMatrix<Scalar> ds = (p.array() * (dp.array().colwise() - dots.array())).matrix() * inv_sqrt_d;
          MatrixMap<Scalar>(gq.data() + b * n * d, n, d).noalias() = ds * kb;
          MatrixMap<Scalar>(gk.data() + b * nk * d, nk, d).noalias() = ds.transpose() * qb;
        }
        if (wants(self, 0)) self.parents[0]->accumulate(std::move(gq));
        if (wants(self, 1)) self.parents[1]->accumulate(std::move(gk));
        if (wants(self, 2)) self.parents[2]->accumulate(std::move(gv));
      });
}

#define MVGEN_INSTANTIATE(S)                                                                      \
  template Var<S> add(const Var<S>&, const Var<S>&);                                              \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                              \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                              \
  template Var<S> scale(const Var<S>&, S);                                                        \
  template Var<S> reshape(const Var<S>&, Shape);                                                  \
  template Var<S> sum(const Var<S>&);                                                             \
  template Var<S> mean_squared_error(const Var<S>&, const Var<S>&);                               \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                           \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                            \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, Conv2dOptions);             \
  template Var<S> group_norm(const Var<S>&, Index, const Var<S>&, const Var<S>&, S);              \
  template Var<S> modulate(const Var<S>&, const Var<S>&, const Var<S>&);                          \
  template Var<S> add_per_item(const Var<S>&, const Var<S>&);                                     \
  template Var<S> softmax_rows(const Var<S>&);                                                    \
  template Var<S> silu(const Var<S>&);                                                            \
  template Var<S> nearest_upsample(const Var<S>&, Index);                                         \
  template Var<S> avgpool_downsample(const Var<S>&, Index);                                       \
  template Var<S> concat_channels(const Var<S>&, const Var<S>&);                                  \
  template Var<S> embedding(const Var<S>&, std::span<const int>);                                 \
  template Var<S> attention(const Var<S>&, const Var<S>&, const Var<S>&);
MVGEN_INSTANTIATE(float)
MVGEN_INSTANTIATE(double)
#undef MVGEN_INSTANTIATE

}  // namespace mvgen
