#pragma once

#include "mvgen/feature_grid.hpp"
#include "mvgen/pca.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvgen {

/// An image whose foreground cannot be segmented.
class RejectedImage : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ForegroundMask {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> cells;  // row-major, 1 = foreground
  int sign_used = 1;

  bool at(Index row, Index col) const { return cells[static_cast<std::size_t>(row * width + col)] != 0; }
  Index count() const;
};

// Pixel rectangle [x0, x1) x [y0, y1).
struct BoundingBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool operator==(const BoundingBox&) const = default;
};

// Centered box spanning `fraction` of each image side.
BoundingBox default_target_box(double image_width, double image_height, double fraction = 0.8);

// Tokens projecting to the positive side of PC1 (after orienting its sign) are
// foreground. The orientation marks fewer border tokens as foreground; ties go
// to the sign with fewer foreground tokens. Throws RejectedImage when both
// orientations give an empty mask.
ForegroundMask foreground_mask(const FeatureGrid& grid, const PcaModel& pca1);

// Pixel bounding box of the foreground patches.
BoundingBox foreground_box(const ForegroundMask& mask, int patch_size);

struct Recentered {
  FeatureGrid grid;
  ForegroundMask mask;
  std::optional<Tensor<float>> image;  // [H, W, C] when an image was supplied
};

// Maps the foreground box onto `target` (independent x/y scales). Features and
// mask are resampled nearest-neighbor, the image bilinearly; sizes unchanged.
Recentered center_rescale(const FeatureGrid& grid, const ForegroundMask& mask, const BoundingBox& target,
                          const Tensor<float>* image = nullptr);

// 3 x h x w descriptor (channel-major) of PCA projections; background is zero.
Eigen::VectorXd pose_descriptor(const FeatureGrid& grid, const ForegroundMask& mask, const PcaModel& pca2);

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // m x D
  double inertia = 0.0;
  std::vector<double> inertia_history;  // one entry per Lloyd assignment
  int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding. descriptors: n x D.
// Throws std::invalid_argument when n < m.
KMeansResult kmeans(const Eigen::Ref<const Eigen::MatrixXd>& descriptors, int m, std::uint64_t seed,
                    int max_iters = 100, double tol = 1e-6, int restarts = 1);

// Nearest centroid by L2 distance; ties go to the lowest index.
int assign_pose(const Eigen::Ref<const Eigen::VectorXd>& descriptor, const Eigen::Ref<const Eigen::MatrixXd>& centroids);

struct ClusteringConfig {
  int k = 8;
  std::uint64_t seed = 0;
  int max_iters = 100;
  double tol = 1e-6;
  int restarts = 10;
  Index pca_batch = 256;
  double box_fraction = 0.8;
};

/// Everything needed to label a new feature grid with a discovered pose.
struct PoseModel {
  int k = 0;
  Index grid_height = 0;
  Index grid_width = 0;
  Index channels = 0;
  int patch_size = 1;
  PcaModel pca1;
  PcaModel pca2;
  BoundingBox target_box;
  std::vector<std::string> image_ids;  // clustered images, input order
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // k x (3 * h * w)
  double inertia = 0.0;
  std::vector<double> inertia_history;
  std::vector<std::string> rejected;

  std::map<std::string, int> label_map() const;
};

// Full pose discovery over a collection of grids sharing (h, w, c).
PoseModel cluster_poses(std::span<const FeatureGrid> grids, const ClusteringConfig& config);

// Mask, recenter and project one grid with a fitted model.
Eigen::VectorXd describe_pose(const FeatureGrid& grid, const PoseModel& model);

int classify_pose(const FeatureGrid& grid, const PoseModel& model);

}  // namespace mvgen
