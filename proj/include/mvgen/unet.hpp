#pragma once

#include "mvgen/parameters.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mvgen {

/// Architecture of the pose-conditioned noise predictor.
struct UNetConfig {
  int image_size = 32;
  int in_channels = 3;
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 2};
  int res_blocks_per_level = 2;
  // Feature-map resolutions (pixels per side) that get a self-attention layer
  // after each residual block. The bottleneck always has one.
  std::vector<int> attention_resolutions{16, 8};
  int groupnorm_groups = 8;
  int embed_dim = 128;
  int pose_count = 8;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  int resolution(int level) const { return image_size >> level; }
  bool has_attention(int resolution) const;

  // Throws std::invalid_argument when the image size is not divisible by
  // 2^(levels-1) or a group count does not divide some channel count.
  void validate() const;

  bool operator==(const UNetConfig&) const = default;
};

enum class AttentionMode { standard, record_kv, use_reference_kv, use_reference_kv_hard };

const char* to_string(AttentionMode mode);

/// Keys and values of one attention layer for a single image, n x d each.
template <typename Scalar>
struct KvPair {
  RowMatrix<Scalar> keys;
  RowMatrix<Scalar> values;
};

template <typename Scalar>
using LayerKv = std::map<std::string, KvPair<Scalar>>;

/// How the bottleneck and decoder attention layers behave in one forward pass.
/// Encoder attention is always standard self-attention.
template <typename Scalar>
struct AttentionControl {
  AttentionMode mode = AttentionMode::standard;
  const LayerKv<Scalar>* reference = nullptr;  // read in the use_reference_* modes
  LayerKv<Scalar>* record = nullptr;           // filled in record_kv mode
};

struct ParameterSpec {
  std::string name;
  Shape shape;
};

// Every parameter the config implies, in registration order.
std::vector<ParameterSpec> unet_parameter_specs(const UNetConfig& config);

// Names of the attention layers that take part in cross-frame attention
// (bottleneck and decoder).
std::vector<std::string> cross_frame_layers(const UNetConfig& config);

ParameterSet<float> init_unet_parameters(const UNetConfig& config, std::uint64_t seed);

// Sinusoidal timestep features, [timesteps.size(), dim].
template <typename Scalar>
Tensor<Scalar> timestep_features(std::span<const int> timesteps, int dim);

// Predicted noise for x: [B, S, S, in_channels]. One timestep and pose label
// per batch item. record_kv and the reference modes require B = 1 for
// recording; reference K/V are shared by every item.
template <typename Scalar>
Var<Scalar> unet_forward(const UNetConfig& config, const BoundParameters<Scalar>& params, const Var<Scalar>& x,
                         std::span<const int> timesteps, std::span<const int> poses,
                         const AttentionControl<Scalar>& control = {});

}  // namespace mvgen
