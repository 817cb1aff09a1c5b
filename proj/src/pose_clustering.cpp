#include "mvgen/pose_clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mvgen {

Index ForegroundMask::count() const {
  return static_cast<Index>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

BoundingBox default_target_box(double image_width, double image_height, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("default_target_box: fraction must be in (0, 1]");
  }
  const double mx = image_width * (1.0 - fraction) / 2.0;
  const double my = image_height * (1.0 - fraction) / 2.0;
  return {mx, my, image_width - mx, image_height - my};
}

ForegroundMask foreground_mask(const FeatureGrid& grid, const PcaModel& pca1) {
  if (pca1.k() < 1) throw std::invalid_argument("foreground_mask: PCA model has no components");
  if (pca1.dim() != grid.channels) {
    throw std::invalid_argument("foreground_mask: PCA dimension " + std::to_string(pca1.dim()) +
                                " != feature channels " + std::to_string(grid.channels));
  }
  const Index n = grid.height * grid.width;
  const Eigen::VectorXd pc1 = pca1.components.row(0).transpose();
  const Eigen::VectorXd proj =
      (grid.tokens.cast<double>().rowwise() - pca1.mean.transpose()) * pc1;

  struct Candidate {
    int sign;
    Index border_fg = 0;
    Index total_fg = 0;
  };
  Candidate pos{+1}, neg{-1};
  for (Index r = 0; r < grid.height; ++r) {
    for (Index c = 0; c < grid.width; ++c) {
      const bool border = r == 0 || c == 0 || r == grid.height - 1 || c == grid.width - 1;
      const double p = proj(grid.token_index(r, c));
      if (p > 0) {
        ++pos.total_fg;
        pos.border_fg += border;
      } else if (p < 0) {
        ++neg.total_fg;
        neg.border_fg += border;
      }
    }
  }
  // Both signs share the border denominator, so compare counts directly.
  const bool prefer_pos = pos.border_fg != neg.border_fg ? pos.border_fg < neg.border_fg
                                                         : pos.total_fg <= neg.total_fg;
  const Candidate order[2] = {prefer_pos ? pos : neg, prefer_pos ? neg : pos};
  for (const Candidate& cand : order) {
    if (cand.total_fg == 0) continue;
    ForegroundMask mask;
    mask.height = grid.height;
    mask.width = grid.width;
    mask.sign_used = cand.sign;
    mask.cells.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) mask.cells[static_cast<std::size_t>(i)] = cand.sign * proj(i) > 0 ? 1 : 0;
    return mask;
  }
  throw RejectedImage("image '" + grid.image_id + "': empty foreground mask for both PC1 orientations");
}

BoundingBox foreground_box(const ForegroundMask& mask, int patch_size) {
  Index r0 = mask.height, r1 = -1, c0 = mask.width, c1 = -1;
  for (Index r = 0; r < mask.height; ++r) {
    for (Index c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  if (r1 < 0) throw RejectedImage("foreground_box: empty mask");
  const double ps = patch_size;
  return {c0 * ps, r0 * ps, (c1 + 1) * ps, (r1 + 1) * ps};
}

Recentered center_rescale(const FeatureGrid& grid, const ForegroundMask& mask, const BoundingBox& target,
                          const Tensor<float>* image) {
  if (mask.height != grid.height || mask.width != grid.width) {
    throw std::invalid_argument("center_rescale: mask and grid sizes differ");
  }
  const double ps = grid.patch_size;
  const double frame_w = grid.width * ps, frame_h = grid.height * ps;
  if (!(target.width() > 0 && target.height() > 0) || target.x0 < 0 || target.y0 < 0 ||
      target.x1 > frame_w || target.y1 > frame_h) {
    throw std::invalid_argument("center_rescale: target box must be non-empty and inside the frame");
  }
  const BoundingBox src = foreground_box(mask, grid.patch_size);
  if (!(src.width() > 0 && src.height() > 0)) {
    throw RejectedImage("image '" + grid.image_id + "': degenerate foreground box");
  }
  const double sx = target.width() / src.width();
  const double sy = target.height() / src.height();
  auto inv_x = [&](double x) { return src.x0 + (x - target.x0) / sx; };
  auto inv_y = [&](double y) { return src.y0 + (y - target.y0) / sy; };

  Recentered out;
  out.grid = FeatureGrid(grid.image_id, grid.height, grid.width, grid.channels, grid.patch_size);
  out.mask.height = grid.height;
  out.mask.width = grid.width;
  out.mask.sign_used = mask.sign_used;
  out.mask.cells.assign(mask.cells.size(), 0);
  for (Index r = 0; r < grid.height; ++r) {
    for (Index c = 0; c < grid.width; ++c) {
      const double px = inv_x((c + 0.5) * ps), py = inv_y((r + 0.5) * ps);
      const Index ic = static_cast<Index>(std::floor(px / ps));
      const Index ir = static_cast<Index>(std::floor(py / ps));
      const bool inside = ic >= 0 && ic < grid.width && ir >= 0 && ir < grid.height;
      const Index cc = std::clamp<Index>(ic, 0, grid.width - 1);
      const Index rr = std::clamp<Index>(ir, 0, grid.height - 1);
      out.grid.token(r, c) = grid.token(rr, cc);
      out.mask.cells[static_cast<std::size_t>(r * grid.width + c)] = inside && mask.at(rr, cc) ? 1 : 0;
    }
  }

  if (image) {
    if (image->rank() != 3) throw std::invalid_argument("center_rescale: image must be [H, W, C]");
    const Index h = image->dim(0), w = image->dim(1), ch = image->dim(2);
    Tensor<float> res(image->shape());
    auto at = [&](Index y, Index x, Index k) {
      y = std::clamp<Index>(y, 0, h - 1);
      x = std::clamp<Index>(x, 0, w - 1);
      return (*image)[(y * w + x) * ch + k];
    };
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const double u = inv_x(x + 0.5) - 0.5, v = inv_y(y + 0.5) - 0.5;
        const Index x0 = static_cast<Index>(std::floor(u)), y0 = static_cast<Index>(std::floor(v));
        const double fx = u - x0, fy = v - y0;
        for (Index k = 0; k < ch; ++k) {
          const double top = (1 - fx) * at(y0, x0, k) + fx * at(y0, x0 + 1, k);
          const double bot = (1 - fx) * at(y0 + 1, x0, k) + fx * at(y0 + 1, x0 + 1, k);
          res[(y * w + x) * ch + k] = static_cast<float>((1 - fy) * top + fy * bot);
        }
      }
    }
    out.image = std::move(res);
  }
  return out;
}

Eigen::VectorXd pose_descriptor(const FeatureGrid& grid, const ForegroundMask& mask, const PcaModel& pca2) {
  if (pca2.k() != 3) {
    throw std::invalid_argument("pose_descriptor: second PCA must have 3 components, has " +
                                std::to_string(pca2.k()));
  }
  if (pca2.dim() != grid.channels) throw std::invalid_argument("pose_descriptor: PCA dimension mismatch");
  if (mask.height != grid.height || mask.width != grid.width) {
    throw std::invalid_argument("pose_descriptor: mask and grid sizes differ");
  }
  const Index n = grid.height * grid.width;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(3 * n);
  for (Index i = 0; i < n; ++i) {
    if (!mask.cells[static_cast<std::size_t>(i)]) continue;
    const Eigen::Vector3d p = pca2.components * (grid.tokens.row(i).cast<double>().transpose() - pca2.mean);
    for (Index k = 0; k < 3; ++k) out(k * n + i) = p(k);
  }
  return out;
}

namespace {

int nearest(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::MatrixXd>& centroids,
            double* dist_out) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < centroids.rows(); ++j) {
    const double d = (centroids.row(j).transpose() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

Eigen::MatrixXd kmeans_plus_plus(const Eigen::Ref<const Eigen::MatrixXd>& x, int m, NormalStream& rng) {
  const Index n = x.rows();
  Eigen::MatrixXd centroids(m, x.cols());
  Index first = static_cast<Index>(rng.uniform() * static_cast<double>(n));
  centroids.row(0) = x.row(std::min(first, n - 1));
  Eigen::VectorXd d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = (x.row(i) - centroids.row(0)).squaredNorm();
  for (int j = 1; j < m; ++j) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0) {
      const double target = rng.uniform() * total;
      double acc = 0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc > target && d2(i) > 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(static_cast<Index>(rng.uniform() * static_cast<double>(n)), n - 1);
    }
    centroids.row(j) = x.row(pick);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (x.row(i) - centroids.row(j)).squaredNorm());
  }
  return centroids;
}

KMeansResult lloyd(const Eigen::Ref<const Eigen::MatrixXd>& x, Eigen::MatrixXd centroids, int max_iters,
                   double tol) {
  const Index n = x.rows();
  const int m = static_cast<int>(centroids.rows());
  KMeansResult res;
  res.labels.assign(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n));

  auto assign = [&]() {
    double j = 0;
    for (Index i = 0; i < n; ++i) {
      res.labels[static_cast<std::size_t>(i)] = nearest(x.row(i).transpose(), centroids, &dist[static_cast<std::size_t>(i)]);
      j += dist[static_cast<std::size_t>(i)];
    }
    return j;
  };

  for (int it = 0; it < max_iters; ++it) {
    const double objective = assign();
    if (!res.inertia_history.empty()) {
      const double prev = res.inertia_history.back();
      if (objective > prev + 1e-9 * std::abs(prev) + 1e-12) {
        throw std::logic_error("kmeans: objective increased from " + std::to_string(prev) + " to " +
                               std::to_string(objective));
      }
    }
    res.inertia_history.push_back(objective);
    res.iterations = it + 1;

    Eigen::MatrixXd updated = Eigen::MatrixXd::Zero(m, x.cols());
    std::vector<Index> counts(static_cast<std::size_t>(m), 0);
    for (Index i = 0; i < n; ++i) {
      const int l = res.labels[static_cast<std::size_t>(i)];
      updated.row(l) += x.row(i);
      ++counts[static_cast<std::size_t>(l)];
    }
    for (int l = 0; l < m; ++l) {
      if (counts[static_cast<std::size_t>(l)] > 0) {
        updated.row(l) /= static_cast<double>(counts[static_cast<std::size_t>(l)]);
        continue;
      }
      // Empty cluster: take over the point farthest from its centroid.
      Index far = 0;
      for (Index i = 1; i < n; ++i) {
        if (dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      const int old = res.labels[static_cast<std::size_t>(far)];
      updated.row(l) = x.row(far);
      dist[static_cast<std::size_t>(far)] = 0;
      res.labels[static_cast<std::size_t>(far)] = l;
      --counts[static_cast<std::size_t>(old)];
      counts[static_cast<std::size_t>(l)] = 1;
      if (counts[static_cast<std::size_t>(old)] > 0) {
        updated.row(old).setZero();
        for (Index i = 0; i < n; ++i) {
          if (res.labels[static_cast<std::size_t>(i)] == old) updated.row(old) += x.row(i);
        }
        updated.row(old) /= static_cast<double>(counts[static_cast<std::size_t>(old)]);
      }
    }
    const double shift = (updated - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(updated);
    if (shift < tol) break;
  }
  res.inertia = assign();
  res.centroids = std::move(centroids);
  return res;
}

}  // namespace

KMeansResult kmeans(const Eigen::Ref<const Eigen::MatrixXd>& descriptors, int m, std::uint64_t seed,
                    int max_iters, double tol, int restarts) {
  const Index n = descriptors.rows();
  if (m < 1) throw std::invalid_argument("kmeans: cluster count must be positive");
  if (n < m) {
    throw std::invalid_argument("kmeans: " + std::to_string(n) + " descriptors for " + std::to_string(m) +
                                " clusters");
  }
  if (max_iters < 1 || restarts < 1) throw std::invalid_argument("kmeans: max_iters and restarts must be positive");
  std::optional<KMeansResult> best;
  for (int r = 0; r < restarts; ++r) {
    NormalStream rng(restarts == 1 ? seed : derive_seed(seed, static_cast<std::uint64_t>(r)));
    KMeansResult res = lloyd(descriptors, kmeans_plus_plus(descriptors, m, rng), max_iters, tol);
    if (!best || res.inertia < best->inertia) best = std::move(res);
  }
  return std::move(*best);
}

int assign_pose(const Eigen::Ref<const Eigen::VectorXd>& descriptor, const Eigen::Ref<const Eigen::MatrixXd>& centroids) {
  if (centroids.rows() < 1) throw std::invalid_argument("assign_pose: no centroids");
  if (descriptor.size() != centroids.cols()) {
    throw std::invalid_argument("assign_pose: descriptor length " + std::to_string(descriptor.size()) +
                                " != centroid length " + std::to_string(centroids.cols()));
  }
  return nearest(descriptor, centroids, nullptr);
}

std::map<std::string, int> PoseModel::label_map() const {
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < image_ids.size(); ++i) out.emplace(image_ids[i], labels[i]);
  return out;
}

namespace {

// Feeds token rows to an IncrementalPca in fixed-size batches across grid
// boundaries.
class TokenBatcher {
 public:
  TokenBatcher(IncrementalPca& pca, Index batch, Index dim) : pca_(pca), buffer_(batch, dim) {}

  void push(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    buffer_.row(fill_++) = row;
    if (fill_ == buffer_.rows()) flush();
  }
  void flush() {
    if (fill_ > 0) pca_.partial_fit(buffer_.topRows(fill_));
    fill_ = 0;
  }

 private:
  IncrementalPca& pca_;
  Eigen::MatrixXd buffer_;
  Index fill_ = 0;
};

}  // namespace

PoseModel cluster_poses(std::span<const FeatureGrid> grids, const ClusteringConfig& config) {
  if (grids.empty()) throw std::invalid_argument("cluster_poses: no feature grids");
  PoseModel model;
  model.k = config.k;
  model.grid_height = grids.front().height;
  model.grid_width = grids.front().width;
  model.channels = grids.front().channels;
  model.patch_size = grids.front().patch_size;
  for (const auto& g : grids) {
    if (g.height != model.grid_height || g.width != model.grid_width || g.channels != model.channels ||
        g.patch_size != model.patch_size) {
      throw std::invalid_argument("cluster_poses: grid '" + g.image_id + "' has inconsistent dimensions");
    }
  }
  if (model.channels < 3) throw std::invalid_argument("cluster_poses: need at least 3 feature channels");
  model.target_box = default_target_box(static_cast<double>(model.grid_width * model.patch_size),
                                        static_cast<double>(model.grid_height * model.patch_size),
                                        config.box_fraction);

  {
    IncrementalPca pca(1);
    TokenBatcher batcher(pca, config.pca_batch, model.channels);
    for (const auto& g : grids) {
      for (Index i = 0; i < g.tokens.rows(); ++i) batcher.push(g.tokens.row(i).cast<double>());
    }
    batcher.flush();
    model.pca1 = pca.model();
  }

  std::vector<Recentered> kept;
  for (const auto& g : grids) {
    try {
      const ForegroundMask mask = foreground_mask(g, model.pca1);
      kept.push_back(center_rescale(g, mask, model.target_box));
      if (kept.back().mask.count() == 0) {
        kept.pop_back();
        throw RejectedImage("empty mask after recentering");
      }
      model.image_ids.push_back(g.image_id);
    } catch (const RejectedImage&) {
      model.rejected.push_back(g.image_id);
    }
  }
  if (static_cast<int>(kept.size()) < config.k) {
    throw std::invalid_argument("cluster_poses: " + std::to_string(kept.size()) + " usable images for k=" +
                                std::to_string(config.k));
  }

  {
    IncrementalPca pca(3);
    TokenBatcher batcher(pca, config.pca_batch, model.channels);
    for (const auto& r : kept) {
      for (Index i = 0; i < r.grid.tokens.rows(); ++i) {
        if (r.mask.cells[static_cast<std::size_t>(i)]) batcher.push(r.grid.tokens.row(i).cast<double>());
      }
    }
    batcher.flush();
    model.pca2 = pca.model();
  }

  const Index dim = 3 * model.grid_height * model.grid_width;
  Eigen::MatrixXd descriptors(static_cast<Index>(kept.size()), dim);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    descriptors.row(static_cast<Index>(i)) = pose_descriptor(kept[i].grid, kept[i].mask, model.pca2).transpose();
  }
  KMeansResult km = kmeans(descriptors, config.k, config.seed, config.max_iters, config.tol, config.restarts);
  model.labels = std::move(km.labels);
  model.centroids = std::move(km.centroids);
  model.inertia = km.inertia;
  model.inertia_history = std::move(km.inertia_history);
  return model;
}

Eigen::VectorXd describe_pose(const FeatureGrid& grid, const PoseModel& model) {
  if (grid.height != model.grid_height || grid.width != model.grid_width || grid.channels != model.channels) {
    throw std::invalid_argument("describe_pose: grid '" + grid.image_id + "' does not match the pose model");
  }
  const ForegroundMask mask = foreground_mask(grid, model.pca1);
  const Recentered r = center_rescale(grid, mask, model.target_box);
  return pose_descriptor(r.grid, r.mask, model.pca2);
}

int classify_pose(const FeatureGrid& grid, const PoseModel& model) {
  return assign_pose(describe_pose(grid, model), model.centroids);
}

}  // namespace mvgen
