#include "mvgen/io/synthetic.hpp"

#include "mvgen/io/binary.hpp"
#include "mvgen/io/feature_file.hpp"
#include "mvgen/io/manifest.hpp"
#include "mvgen/io/png_image.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mvgen::io {

namespace {

using Vec3 = std::array<double, 3>;

// Colors below are in [0, 1]; images store 2c - 1.
constexpr std::array<Rgb, kCuboidFaces> kPalette01{{
    {0.85f, 0.15f, 0.15f},  // +x
    {0.20f, 0.70f, 0.25f},  // -x
    {0.90f, 0.80f, 0.20f},  // +y (top)
    {0.45f, 0.30f, 0.15f},  // -y (bottom)
    {0.20f, 0.30f, 0.85f},  // +z
    {0.75f, 0.25f, 0.75f},  // -z
}};
constexpr Rgb kBackground01{0.90f, 0.90f, 0.90f};
constexpr double kMinShade = 0.7;
const Vec3 kLight = [] {
  Vec3 l{-0.3, 0.6, 0.75};
  const double n = std::sqrt(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
  return Vec3{l[0] / n, l[1] / n, l[2] / n};
}();

Rgb to_unit(const Rgb& c01) { return {2 * c01[0] - 1, 2 * c01[1] - 1, 2 * c01[2] - 1}; }

// Face f: axis f / 2, outward sign + for even f.
Vec3 face_normal(int f) {
  Vec3 n{0, 0, 0};
  n[static_cast<std::size_t>(f / 2)] = (f % 2 == 0) ? 1.0 : -1.0;
  return n;
}

struct Camera {
  double cy, sy, ce, se;
  explicit Camera(const CuboidView& v) {
    const double yaw = v.yaw_deg * std::numbers::pi / 180.0;
    const double el = v.elevation_deg * std::numbers::pi / 180.0;
    cy = std::cos(yaw);
    sy = std::sin(yaw);
    ce = std::cos(el);
    se = std::sin(el);
  }
  // Yaw about the vertical axis, then tilt the top toward the viewer (+z).
  Vec3 apply(const Vec3& p) const {
    const double x = cy * p[0] + sy * p[2];
    const double z = -sy * p[0] + cy * p[2];
    return {x, ce * p[1] - se * z, se * p[1] + ce * z};
  }
};

std::array<Vec3, 4> face_corners(int f, const std::array<double, 3>& size) {
  const auto axis = static_cast<std::size_t>(f / 2);
  const std::size_t u = (axis + 1) % 3, v = (axis + 2) % 3;
  const double half[3] = {size[0] / 2, size[1] / 2, size[2] / 2};
  const double s = (f % 2 == 0) ? 1.0 : -1.0;
  std::array<Vec3, 4> out{};
  const double us[4] = {-1, 1, 1, -1}, vs[4] = {-1, -1, 1, 1};
  for (int i = 0; i < 4; ++i) {
    Vec3 p{};
    p[axis] = s * half[axis];
    p[u] = us[i] * half[u];
    p[v] = vs[i] * half[v];
    out[static_cast<std::size_t>(i)] = p;
  }
  return out;
}

double shade(const Vec3& n) {
  const double d = n[0] * kLight[0] + n[1] * kLight[1] + n[2] * kLight[2];
  return kMinShade + (1.0 - kMinShade) * std::max(0.0, d);
}

bool inside(const std::array<std::array<double, 2>, 4>& poly, double x, double y) {
  int pos = 0, neg = 0;
  for (int i = 0; i < 4; ++i) {
    const auto& a = poly[static_cast<std::size_t>(i)];
    const auto& b = poly[static_cast<std::size_t>((i + 1) % 4)];
    const double cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    if (cross > 0) ++pos;
    if (cross < 0) ++neg;
  }
  return pos == 0 || neg == 0;
}

double sphere_radius(const std::array<double, 3>& size) {
  return 0.5 * std::sqrt(size[0] * size[0] + size[1] * size[1] + size[2] * size[2]);
}

}  // namespace

const std::array<Rgb, kCuboidFaces>& face_palette() {
  static const std::array<Rgb, kCuboidFaces> palette = [] {
    std::array<Rgb, kCuboidFaces> p{};
    for (std::size_t f = 0; f < p.size(); ++f) p[f] = to_unit(kPalette01[f]);
    return p;
  }();
  return palette;
}

const Rgb& background_color() {
  static const Rgb bg = to_unit(kBackground01);
  return bg;
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("synthetic spec: " + field + " " + why);
  };
  if (yaw_bins < 2) fail("yaw_bins", "must be at least 2");
  if (samples_per_bin < 1) fail("samples_per_bin", "must be positive");
  if (image_size < 1) fail("image_size", "must be positive");
  if (patch_size < 1 || image_size % patch_size != 0) fail("patch_size", "must divide image_size");
  for (double s : box_size) {
    if (!(s > 0)) fail("box_size", "extents must be positive");
  }
  if (!(object_scale > 0)) fail("object_scale", "must be positive");
  if (translation_jitter < 0) fail("translation_jitter", "must be nonnegative");
  if (scale_jitter < 0 || scale_jitter >= 1) fail("scale_jitter", "must be in [0, 1)");
  if (color_jitter < 0) fail("color_jitter", "must be nonnegative");
  if (feature_noise < 0) fail("feature_noise", "must be nonnegative");
  const double half = image_size / 2.0;
  const double radius = object_scale * half;
  if (radius > half) fail("object_scale", "puts the object outside the frame");
  if (radius * (1 + scale_jitter) > half) {
    fail("scale_jitter", "can push the object off-frame (radius " + std::to_string(radius * (1 + scale_jitter)) +
                             " px > " + std::to_string(half) + " px)");
  }
  if (radius * (1 + scale_jitter) + translation_jitter > half) {
    fail("translation_jitter", "can push the object off-frame (" +
                                   std::to_string(radius * (1 + scale_jitter) + translation_jitter) +
                                   " px from center > " + std::to_string(half) + " px)");
  }
}

std::vector<std::uint8_t> Rendering::mask() const {
  std::vector<std::uint8_t> m(face.size());
  for (std::size_t i = 0; i < face.size(); ++i) m[i] = face[i] >= 0 ? 1 : 0;
  return m;
}

std::vector<int> visible_faces(const CuboidView& view) {
  const Camera cam(view);
  std::vector<int> out;
  for (int f = 0; f < kCuboidFaces; ++f) {
    if (cam.apply(face_normal(f))[2] > 1e-9) out.push_back(f);
  }
  return out;
}

Rendering render_cuboid(const CuboidView& view, int image_size) {
  const Camera cam(view);
  struct Face {
    int index;
    double depth;
    std::array<std::array<double, 2>, 4> poly;
  };
  std::vector<Face> faces;
  for (int f : visible_faces(view)) {
    Face face{f, 0.0, {}};
    const auto corners = face_corners(f, view.box_size);
    for (std::size_t i = 0; i < 4; ++i) {
      const Vec3 p = cam.apply(corners[i]);
      face.poly[i] = {view.center_x + view.scale_px * p[0], view.center_y - view.scale_px * p[1]};
      face.depth += p[2] / 4;
    }
    faces.push_back(face);
  }
  // Farthest first so nearer faces overwrite.
  std::stable_sort(faces.begin(), faces.end(), [](const Face& a, const Face& b) { return a.depth < b.depth; });

  Rendering r;
  r.size = image_size;
  r.face.assign(static_cast<std::size_t>(image_size * image_size), -1);
  for (const Face& f : faces) {
    for (int y = 0; y < image_size; ++y) {
      for (int x = 0; x < image_size; ++x) {
        if (inside(f.poly, x + 0.5, y + 0.5)) r.face[static_cast<std::size_t>(y * image_size + x)] = static_cast<std::int8_t>(f.index);
      }
    }
  }
  std::array<Rgb, kCuboidFaces> shaded{};
  for (int f = 0; f < kCuboidFaces; ++f) {
    const double s = shade(cam.apply(face_normal(f)));
    for (std::size_t c = 0; c < 3; ++c) {
      const double c01 = (view.colors[static_cast<std::size_t>(f)][c] + 1.0) / 2.0;
      shaded[static_cast<std::size_t>(f)][c] = static_cast<float>(2.0 * std::clamp(c01 * s, 0.0, 1.0) - 1.0);
    }
  }
  r.image = Tensor<float>({image_size, image_size, 3});
  for (std::size_t i = 0; i < r.face.size(); ++i) {
    const Rgb& color = r.face[i] < 0 ? background_color() : shaded[static_cast<std::size_t>(r.face[i])];
    for (std::size_t c = 0; c < 3; ++c) r.image[static_cast<Index>(i * 3 + c)] = color[c];
  }
  return r;
}

namespace {

FeatureGrid histogram_features(const std::vector<std::int8_t>& labels, int size, int patch_size, std::string id) {
  if (patch_size < 1 || size % patch_size != 0) throw std::invalid_argument("patch_size must divide the image size");
  const int g = size / patch_size;
  FeatureGrid grid(std::move(id), g, g, kSyntheticChannels, patch_size);
  const float w = 1.0f / static_cast<float>(patch_size * patch_size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int label = labels[static_cast<std::size_t>(y * size + x)];
      const int channel = label < 0 ? kCuboidFaces : label;
      grid.token(y / patch_size, x / patch_size)(channel) += w;
    }
  }
  return grid;
}

}  // namespace

FeatureGrid coverage_features(const Rendering& r, int patch_size, std::string image_id) {
  return histogram_features(r.face, r.size, patch_size, std::move(image_id));
}

FeatureGrid features_from_image(const Tensor<float>& image, int patch_size, std::string image_id) {
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) != image.dim(1)) {
    throw std::invalid_argument("features_from_image: expected a square [S, S, 3] image");
  }
  const int size = static_cast<int>(image.dim(0));
  std::vector<std::int8_t> labels(static_cast<std::size_t>(size * size));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double p[3];
    for (std::size_t c = 0; c < 3; ++c) p[c] = (image[static_cast<Index>(i * 3 + c)] + 1.0) / 2.0;
    double best = 0;
    for (std::size_t c = 0; c < 3; ++c) best += (p[c] - kBackground01[c]) * (p[c] - kBackground01[c]);
    int label = -1;
    for (int f = 0; f < kCuboidFaces; ++f) {
      // Best shade within the renderer's range.
      const Rgb& base = kPalette01[static_cast<std::size_t>(f)];
      double dot = 0, norm = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        dot += p[c] * base[c];
        norm += base[c] * base[c];
      }
      const double s = std::clamp(dot / norm, kMinShade, 1.0);
      double d = 0;
      for (std::size_t c = 0; c < 3; ++c) d += (p[c] - s * base[c]) * (p[c] - s * base[c]);
      if (d < best) {
        best = d;
        label = f;
      }
    }
    labels[i] = static_cast<std::int8_t>(label);
  }
  return histogram_features(labels, size, patch_size, std::move(image_id));
}

std::string synthetic_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05d", index);
  return buf;
}

SyntheticSample render_sample(const SyntheticSpec& spec, int index) {
  NormalStream rng(spec.seed ^ static_cast<std::uint64_t>(index));
  auto sym = [&rng](double amplitude) { return amplitude * (2.0 * rng.uniform() - 1.0); };

  SyntheticSample s;
  s.id = synthetic_id(index);
  s.yaw_bin = index % spec.yaw_bins;
  s.yaw_deg = 360.0 * s.yaw_bin / spec.yaw_bins;
  CuboidView& v = s.view;
  v.yaw_deg = s.yaw_deg;
  v.elevation_deg = spec.elevation_deg;
  v.box_size = spec.box_size;
  const double base_scale = spec.object_scale * spec.image_size / (2.0 * sphere_radius(spec.box_size));
  v.scale_px = base_scale * (1.0 + sym(spec.scale_jitter));
  v.center_x = spec.image_size / 2.0 + sym(spec.translation_jitter);
  v.center_y = spec.image_size / 2.0 + sym(spec.translation_jitter);
  for (std::size_t f = 0; f < kCuboidFaces; ++f) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double c01 = std::clamp(kPalette01[f][c] + sym(spec.color_jitter), 0.0, 1.0);
      v.colors[f][c] = static_cast<float>(2.0 * c01 - 1.0);
    }
  }
  Rendering r = render_cuboid(v, spec.image_size);
  s.mask = r.mask();
  s.features = coverage_features(r, spec.patch_size, s.id);
  for (Index i = 0; i < s.features.tokens.size(); ++i) {
    s.features.tokens.data()[i] += static_cast<float>(spec.feature_noise * rng.next());
  }
  s.image = std::move(r.image);
  return s;
}

std::vector<SyntheticSample> generate_samples(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<SyntheticSample> out;
  const int n = spec.yaw_bins * spec.samples_per_bin;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(render_sample(spec, i));
  return out;
}

void write_synthetic(const SyntheticSpec& spec, const std::vector<SyntheticSample>& samples,
                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "images");
  std::vector<FeatureGrid> grids;
  nlohmann::json truth_images = nlohmann::json::array();
  for (const auto& s : samples) {
    write_image(out_dir / "images" / (s.id + ".png"), s.image);
    grids.push_back(s.features);
    nlohmann::json mask_rows = nlohmann::json::array();
    for (int y = 0; y < spec.image_size; ++y) {
      std::string row(static_cast<std::size_t>(spec.image_size), '0');
      for (int x = 0; x < spec.image_size; ++x) {
        if (s.mask[static_cast<std::size_t>(y * spec.image_size + x)]) row[static_cast<std::size_t>(x)] = '1';
      }
      mask_rows.push_back(row);
    }
    truth_images.push_back({{"id", s.id},
                            {"yaw_bin", s.yaw_bin},
                            {"yaw_deg", s.yaw_deg},
                            {"visible_faces", visible_faces(s.view)},
                            {"mask", mask_rows}});
  }
  write_features(out_dir / "features.mrgf", grids);
  nlohmann::json truth{{"yaw_bins", spec.yaw_bins}, {"image_size", spec.image_size}, {"images", truth_images}};
  write_file(out_dir / "truth.json", truth.dump(1) + "\n");
  write_manifest(out_dir / "manifest.json", build_manifest(out_dir, spec.image_size, spec.patch_size));
}

SyntheticTruth read_truth(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  SyntheticTruth t;
  t.yaw_bin_count = j.at("yaw_bins").get<int>();
  t.image_size = j.at("image_size").get<int>();
  for (const auto& img : j.at("images")) {
    t.ids.push_back(img.at("id").get<std::string>());
    t.yaw_bins.push_back(img.at("yaw_bin").get<int>());
    std::vector<std::uint8_t> mask;
    for (const auto& row : img.at("mask")) {
      for (char ch : row.get<std::string>()) mask.push_back(ch == '1' ? 1 : 0);
    }
    t.masks.push_back(std::move(mask));
  }
  return t;
}

}  // namespace mvgen::io
