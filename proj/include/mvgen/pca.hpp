#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace mvgen {

/// Mean plus an orthonormal basis of the top-k principal directions.
/// Each component's largest-magnitude entry is positive.
struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // k x c, rows orthonormal
  Eigen::VectorXd explained_variance;
  Eigen::VectorXd singular_values;
  std::int64_t samples_seen = 0;

  Eigen::Index k() const { return components.rows(); }
  Eigen::Index dim() const { return mean.size(); }
};

// samples: n x c. Throws std::invalid_argument when n < k or k > c.
PcaModel fit_pca_exact(const Eigen::Ref<const Eigen::MatrixXd>& samples, Eigen::Index k);

/// Streaming PCA: each batch is merged into the running factorization by a
/// thin SVD of [S·V; X_batch − mean_batch; mean correction row].
/// By default the running factorization keeps every direction (at most the
/// feature dimension), which makes the merge exact up to rounding. A
/// nonnegative `oversample` truncates to k + oversample directions instead,
/// trading accuracy for memory. model() reports the top k.
class IncrementalPca {
 public:
  explicit IncrementalPca(Eigen::Index k, Eigen::Index oversample = kKeepAll);

  static constexpr Eigen::Index kKeepAll = -1;

  void partial_fit(const Eigen::Ref<const Eigen::MatrixXd>& batch);

  // Throws std::logic_error before k components are available.
  PcaModel model() const;
  const Eigen::VectorXd& mean() const { return mean_; }
  std::int64_t samples_seen() const { return seen_; }

 private:
  Eigen::Index k_;
  Eigen::Index oversample_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd components_;
  Eigen::VectorXd singular_values_;
  std::int64_t seen_ = 0;
};

PcaModel fit_pca_incremental(const Eigen::Ref<const Eigen::MatrixXd>& samples, Eigen::Index k,
                             Eigen::Index batch_size = 256);

// components · (x − mean)
Eigen::VectorXd project(const PcaModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

// Flips each row so its largest-magnitude entry is positive.
void apply_sign_convention(Eigen::MatrixXd& components);

}  // namespace mvgen
