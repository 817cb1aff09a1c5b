#include "mvgen/unet.hpp"

#include "mvgen/attention.hpp"
#include "mvgen/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mvgen {

bool UNetConfig::has_attention(int res) const {
  return std::find(attention_resolutions.begin(), attention_resolutions.end(), res) !=
         attention_resolutions.end();
}

const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::standard: return "standard";
    case AttentionMode::record_kv: return "record_kv";
    case AttentionMode::use_reference_kv: return "use_reference_kv";
    case AttentionMode::use_reference_kv_hard: return "use_reference_kv_hard";
  }
  return "unknown";
}

namespace {

// Walks the architecture once; both parameter registration and the forward
// pass go through it so names and shapes cannot drift apart.
template <typename Visitor>
void walk_unet(const UNetConfig& c, Visitor& v) {
  v.embedding();
  int cur = c.base_channels;
  v.conv("conv_in", c.in_channels, cur);
  std::vector<int> skips{cur};
  v.push_skip();
  for (int l = 0; l < c.levels(); ++l) {
    const int ch = c.base_channels * c.channel_multipliers[static_cast<std::size_t>(l)];
    const std::string level = "down." + std::to_string(l);
    for (int i = 0; i < c.res_blocks_per_level; ++i) {
      v.res_block(level + ".block." + std::to_string(i), cur, ch);
      cur = ch;
      if (c.has_attention(c.resolution(l))) v.attention(level + ".attn." + std::to_string(i), cur, false);
      skips.push_back(cur);
      v.push_skip();
    }
    if (l + 1 < c.levels()) {
      v.downsample(level + ".downsample", cur);
      skips.push_back(cur);
      v.push_skip();
    }
  }
  v.res_block("mid.block.0", cur, cur);
  v.attention("mid.attn", cur, true);
  v.res_block("mid.block.1", cur, cur);
  for (int l = c.levels() - 1; l >= 0; --l) {
    const int ch = c.base_channels * c.channel_multipliers[static_cast<std::size_t>(l)];
    const std::string level = "up." + std::to_string(l);
    for (int i = 0; i <= c.res_blocks_per_level; ++i) {
      const int skip = skips.back();
      skips.pop_back();
      v.pop_skip();
      v.res_block(level + ".block." + std::to_string(i), cur + skip, ch);
      cur = ch;
      if (c.has_attention(c.resolution(l))) v.attention(level + ".attn." + std::to_string(i), cur, true);
    }
    if (l > 0) v.upsample(level + ".upsample", cur);
  }
  v.output(cur);
}

struct SpecCollector {
  const UNetConfig& c;
  std::vector<ParameterSpec> specs;
  std::vector<std::string> cfa_layers;
  std::vector<int> channel_counts;

  void add(std::string name, Shape shape) { specs.push_back({std::move(name), std::move(shape)}); }
  void norm(const std::string& name, int ch) {
    channel_counts.push_back(ch);
    add(name + ".gamma", {ch});
    add(name + ".beta", {ch});
  }
  void conv(const std::string& name, int cin, int cout) {
    add(name + ".weight", {3, 3, cin, cout});
    add(name + ".bias", {cout});
  }
  void dense(const std::string& name, int in, int out) {
    add(name + ".weight", {in, out});
    add(name + ".bias", {out});
  }
  void embedding() {
    dense("time.dense0", c.base_channels, c.embed_dim);
    dense("time.dense1", c.embed_dim, c.embed_dim);
    add("pose_embedding", {c.pose_count, c.embed_dim});
  }
  void res_block(const std::string& name, int cin, int cout) {
    norm(name + ".norm1", cin);
    conv(name + ".conv1", cin, cout);
    dense(name + ".scale", c.embed_dim, cout);
    dense(name + ".shift", c.embed_dim, cout);
    norm(name + ".norm2", cout);
    conv(name + ".conv2", cout, cout);
    if (cin != cout) dense(name + ".skip", cin, cout);
  }
  void attention(const std::string& name, int ch, bool cfa) {
    norm(name + ".norm", ch);
    dense(name + ".q", ch, ch);
    dense(name + ".k", ch, ch);
    dense(name + ".v", ch, ch);
    dense(name + ".proj", ch, ch);
    if (cfa) cfa_layers.push_back(name);
  }
  void downsample(const std::string& name, int ch) { conv(name, ch, ch); }
  void upsample(const std::string& name, int ch) { conv(name, ch, ch); }
  void output(int ch) {
    norm("out.norm", ch);
    conv("out.conv", ch, c.in_channels);
    dense("out.gate", c.embed_dim, c.in_channels);
  }
  void push_skip() {}
  void pop_skip() {}
};

template <typename Scalar>
struct ForwardPass {
  const UNetConfig& c;
  const BoundParameters<Scalar>& p;
  const AttentionControl<Scalar>& control;
  std::span<const int> timesteps;
  std::span<const int> poses;
  Var<Scalar> h;
  Var<Scalar> input;
  Var<Scalar> emb_act;
  std::vector<Var<Scalar>> skips;

  const Var<Scalar>& w(const std::string& name) const { return p[name]; }

  Var<Scalar> norm(const std::string& name, const Var<Scalar>& x) const {
    return group_norm(x, c.groupnorm_groups, w(name + ".gamma"), w(name + ".beta"));
  }
  Var<Scalar> conv3(const std::string& name, const Var<Scalar>& x) const {
    return conv2d(x, w(name + ".weight"), w(name + ".bias"), {1, 1});
  }
  Var<Scalar> dense(const std::string& name, const Var<Scalar>& x) const {
    return linear(x, w(name + ".weight"), w(name + ".bias"));
  }

  void embedding() {
    const Var<Scalar> t = Var<Scalar>::constant(timestep_features<Scalar>(timesteps, c.base_channels));
    Var<Scalar> e = dense("time.dense1", silu(dense("time.dense0", t)));
    e = add(e, mvgen::embedding(w("pose_embedding"), poses));
    emb_act = silu(e);
  }
  void conv(const std::string& name, int, int) { h = conv3(name, h); }
  void res_block(const std::string& name, int cin, int cout) {
    Var<Scalar> x = h;
    if (!skips.empty() && x.shape().back() != cin) throw std::logic_error("res_block: channel bookkeeping");
    Var<Scalar> y = conv3(name + ".conv1", silu(norm(name + ".norm1", x)));
    y = modulate(norm(name + ".norm2", y), dense(name + ".scale", emb_act), dense(name + ".shift", emb_act));
    y = conv3(name + ".conv2", silu(y));
    h = add(cin != cout ? dense(name + ".skip", x) : x, y);
  }
  void attention(const std::string& name, int ch, bool cfa) {
    const Index b = h.dim(0), side_h = h.dim(1), side_w = h.dim(2), n = side_h * side_w;
    const Var<Scalar> x = reshape(norm(name + ".norm", h), {b, n, ch});
    const Var<Scalar> q = dense(name + ".q", x);
    const Var<Scalar> k = dense(name + ".k", x);
    const Var<Scalar> v = dense(name + ".v", x);
    const AttentionMode mode = cfa ? control.mode : AttentionMode::standard;
    Var<Scalar> out;
    switch (mode) {
      case AttentionMode::standard:
        out = mvgen::attention(q, k, v);
        break;
      case AttentionMode::record_kv: {
        if (!control.record) throw std::invalid_argument("record_kv mode without a K/V sink");
        if (b != 1) throw std::invalid_argument("record_kv mode requires batch size 1");
        (*control.record)[name] = KvPair<Scalar>{k.value().matrix(n, ch), v.value().matrix(n, ch)};
        out = mvgen::attention(q, k, v);
        break;
      }
      case AttentionMode::use_reference_kv:
      case AttentionMode::use_reference_kv_hard: {
        if (!control.reference) throw std::invalid_argument("reference attention mode without reference K/V");
        auto it = control.reference->find(name);
        if (it == control.reference->end()) {
          throw std::invalid_argument("missing reference K/V for layer " + name);
        }
        const KvPair<Scalar>& ref = it->second;
        if (ref.keys.cols() != ch || ref.values.cols() != ch) {
          throw std::invalid_argument("reference K/V for layer " + name + " has the wrong width");
        }
        const Index nk = ref.keys.rows();
        if (mode == AttentionMode::use_reference_kv) {
          Tensor<Scalar> kt({b, nk, ch}), vt({b, nk, ch});
          for (Index i = 0; i < b; ++i) {
            MatrixMap<Scalar>(kt.data() + i * nk * ch, nk, ch) = ref.keys;
            MatrixMap<Scalar>(vt.data() + i * nk * ch, nk, ch) = ref.values;
          }
          out = mvgen::attention(q, Var<Scalar>::constant(std::move(kt)), Var<Scalar>::constant(std::move(vt)));
        } else {
          Tensor<Scalar> hard({b, n, ch});
          for (Index i = 0; i < b; ++i) {
            ConstMatrixMap<Scalar> qi(q.value().data() + i * n * ch, n, ch);
            MatrixMap<Scalar>(hard.data() + i * n * ch, n, ch) = argmax_attention<Scalar>(qi, ref.keys, ref.values);
          }
          out = Var<Scalar>::constant(std::move(hard));
        }
        break;
      }
    }
    const Var<Scalar> projected = reshape(dense(name + ".proj", out), {b, side_h, side_w, ch});
    h = add(h, projected);
  }
  void downsample(const std::string& name, int) { h = conv3(name, avgpool_downsample(h, 2)); }
  void upsample(const std::string& name, int) { h = conv3(name, nearest_upsample(h, 2)); }
  // Direct input path, gated per channel by the embedding. At high noise the
  // target is nearly x_t itself, which the conv stack only approximates.
  void output(int) {
    const Var<Scalar> gate = dense("out.gate", emb_act);
    const Var<Scalar> zero = Var<Scalar>::constant(Tensor<Scalar>(gate.shape()));
    const Var<Scalar> gated = sub(modulate(input, gate, zero), input);
    h = add(conv3("out.conv", silu(norm("out.norm", h))), gated);
  }
  void push_skip() { skips.push_back(h); }
  void pop_skip() {
    h = concat_channels(h, skips.back());
    skips.pop_back();
  }
};

}  // namespace

void UNetConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("UNetConfig: " + what); };
  if (image_size < 1 || in_channels < 1 || base_channels < 2 || embed_dim < 1 || pose_count < 1 ||
      res_blocks_per_level < 1 || groupnorm_groups < 1) {
    fail("sizes must be positive");
  }
  if (base_channels % 2 != 0) fail("base_channels must be even");
  if (channel_multipliers.empty()) fail("channel_multipliers must be non-empty");
  for (int m : channel_multipliers) {
    if (m < 1) fail("channel multipliers must be positive");
  }
  const int div = 1 << (levels() - 1);
  if (image_size % div != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by " + std::to_string(div));
  }
  SpecCollector collector{*this, {}, {}, {}};
  walk_unet(*this, collector);
  for (int ch : collector.channel_counts) {
    if (ch % groupnorm_groups != 0) {
      fail(std::to_string(groupnorm_groups) + " groups do not divide " + std::to_string(ch) + " channels");
    }
  }
}

std::vector<ParameterSpec> unet_parameter_specs(const UNetConfig& config) {
  config.validate();
  SpecCollector collector{config, {}, {}, {}};
  walk_unet(config, collector);
  return std::move(collector.specs);
}

std::vector<std::string> cross_frame_layers(const UNetConfig& config) {
  SpecCollector collector{config, {}, {}, {}};
  walk_unet(config, collector);
  return std::move(collector.cfa_layers);
}

ParameterSet<float> init_unet_parameters(const UNetConfig& config, std::uint64_t seed) {
  ParameterSet<float> params;
  std::uint64_t stream = 0;
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const auto& spec : unet_parameter_specs(config)) {
    const std::uint64_t param_seed = derive_seed(seed, stream++);
    Tensor<float> value(spec.shape);
    if (ends_with(spec.name, ".gamma")) {
      value.array().setOnes();
    } else if (spec.name == "pose_embedding") {
      value = seeded_normal<float>(spec.shape, param_seed);
    } else if (ends_with(spec.name, ".weight")) {
      Index fan_in = 1;
      for (std::size_t i = 0; i + 1 < spec.shape.size(); ++i) fan_in *= spec.shape[i];
      float gain = 1.0f;
      if (spec.name == "out.gate.weight") {
        gain = 0.0f;
      } else if (spec.name == "out.conv.weight") {
        gain = 0.01f;
      } else if (ends_with(spec.name, ".conv2.weight") || ends_with(spec.name, ".proj.weight")) {
        gain = 0.25f;
      }
      value = seeded_normal<float>(spec.shape, param_seed);
      value.array() *= gain / std::sqrt(static_cast<float>(fan_in));
    }
    params.add(spec.name, std::move(value));
  }
  return params;
}

template <typename Scalar>
Tensor<Scalar> timestep_features(std::span<const int> timesteps, int dim) {
  const int half = dim / 2;
  const double step = std::log(10000.0) / std::max(1, half - 1);
  Tensor<Scalar> out({static_cast<Index>(timesteps.size()), dim});
  auto m = out.matrix(static_cast<Index>(timesteps.size()), dim);
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double arg = timesteps[b] * std::exp(-step * i);
      m(static_cast<Index>(b), i) = static_cast<Scalar>(std::sin(arg));
      m(static_cast<Index>(b), half + i) = static_cast<Scalar>(std::cos(arg));
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> unet_forward(const UNetConfig& config, const BoundParameters<Scalar>& params, const Var<Scalar>& x,
                         std::span<const int> timesteps, std::span<const int> poses,
                         const AttentionControl<Scalar>& control) {
  const Shape expected{x.dim(0), config.image_size, config.image_size, config.in_channels};
  if (x.shape() != expected) {
    throw std::invalid_argument("unet_forward: input " + shape_string(x.shape()) + ", expected " +
                                shape_string(expected));
  }
  const auto batch = static_cast<std::size_t>(x.dim(0));
  if (timesteps.size() != batch || poses.size() != batch) {
    throw std::invalid_argument("unet_forward: need one timestep and one pose per batch item");
  }
  for (int p : poses) {
    if (p < 0 || p >= config.pose_count) {
      throw std::out_of_range("unet_forward: pose label " + std::to_string(p) + " outside [0, " +
                              std::to_string(config.pose_count) + ")");
    }
  }
  ForwardPass<Scalar> pass{config, params, control, timesteps, poses, x, x, {}, {}};
  walk_unet(config, pass);
  return pass.h;
}

#define MVGEN_INSTANTIATE(S)                                                                      \
  template Tensor<S> timestep_features<S>(std::span<const int>, int);                             \
  template Var<S> unet_forward<S>(const UNetConfig&, const BoundParameters<S>&, const Var<S>&,    \
                                  std::span<const int>, std::span<const int>, const AttentionControl<S>&);
MVGEN_INSTANTIATE(float)
MVGEN_INSTANTIATE(double)
#undef MVGEN_INSTANTIATE

}  // namespace mvgen
