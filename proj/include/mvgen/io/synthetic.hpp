#pragma once

#include "mvgen/feature_grid.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mvgen::io {

inline constexpr int kCuboidFaces = 6;
// Per-patch feature layout: coverage of each face, then background coverage.
inline constexpr int kSyntheticChannels = kCuboidFaces + 1;

using Rgb = std::array<float, 3>;  // [-1, 1]

struct SyntheticSpec {
  int yaw_bins = 8;
  int samples_per_bin = 200;
  int image_size = 32;
  int patch_size = 4;
  double elevation_deg = 20.0;
  std::array<double, 3> box_size{1.0, 1.5, 1.0};  // x, y (vertical), z
  double object_scale = 0.72;        // bounding-sphere diameter / image side
  double translation_jitter = 2.0;   // max |offset| in pixels, per axis
  double scale_jitter = 0.1;         // max relative size change
  double color_jitter = 0.08;        // max per-channel face color offset
  double feature_noise = 0.05;       // std of additive feature noise
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field, including jitter
  // that could push the object outside the frame.
  void validate() const;
};

// Base face colors and the background color used by the renderer.
const std::array<Rgb, kCuboidFaces>& face_palette();
const Rgb& background_color();

struct CuboidView {
  double yaw_deg = 0.0;
  double elevation_deg = 20.0;
  std::array<double, 3> box_size{1.0, 1.5, 1.0};
  double scale_px = 10.0;  // pixels per world unit
  double center_x = 16.0;
  double center_y = 16.0;
  std::array<Rgb, kCuboidFaces> colors = {};
};

struct Rendering {
  Tensor<float> image;           // [S, S, 3]
  std::vector<std::int8_t> face;  // per pixel, -1 for background
  int size = 0;

  std::vector<std::uint8_t> mask() const;
};

// Flat-shaded orthographic rendering with back-face culling and
// painter's-order fill.
Rendering render_cuboid(const CuboidView& view, int image_size);

// Indices of faces whose outward normal points toward the camera.
std::vector<int> visible_faces(const CuboidView& view);

// Coverage histogram per patch (faces + background), no noise.
FeatureGrid coverage_features(const Rendering& r, int patch_size, std::string image_id);

// Same features from pixels alone: each pixel is assigned to the nearest
// palette color (shaded faces or background).
FeatureGrid features_from_image(const Tensor<float>& image, int patch_size, std::string image_id);

struct SyntheticSample {
  std::string id;
  int yaw_bin = 0;
  double yaw_deg = 0.0;
  CuboidView view;
  Tensor<float> image;
  std::vector<std::uint8_t> mask;  // per pixel
  FeatureGrid features;
};

std::string synthetic_id(int index);

// Sample `index` draws its jitter from seed ^ index; bins are interleaved
// (index % yaw_bins).
SyntheticSample render_sample(const SyntheticSpec& spec, int index);

std::vector<SyntheticSample> generate_samples(const SyntheticSpec& spec);

// Writes manifest.json, images/*.png, features.mrgf and truth.json.
void write_synthetic(const SyntheticSpec& spec, const std::vector<SyntheticSample>& samples,
                     const std::filesystem::path& out_dir);

struct SyntheticTruth {
  std::vector<std::string> ids;
  std::vector<int> yaw_bins;
  std::vector<std::vector<std::uint8_t>> masks;
  int yaw_bin_count = 0;
  int image_size = 0;
};

SyntheticTruth read_truth(const std::filesystem::path& path);

}  // namespace mvgen::io
