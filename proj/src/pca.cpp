#include "mvgen/pca.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mvgen {

void apply_sign_convention(Eigen::MatrixXd& components) {
  for (Eigen::Index r = 0; r < components.rows(); ++r) {
    Eigen::Index arg = 0;
    components.row(r).cwiseAbs().maxCoeff(&arg);
    if (components(r, arg) < 0) components.row(r) *= -1.0;
  }
}

PcaModel fit_pca_exact(const Eigen::Ref<const Eigen::MatrixXd>& samples, Eigen::Index k) {
  const Eigen::Index n = samples.rows(), c = samples.cols();
  if (k < 1) throw std::invalid_argument("fit_pca_exact: k must be positive");
  if (k > c) {
    throw std::invalid_argument("fit_pca_exact: k=" + std::to_string(k) + " exceeds feature dimension " +
                                std::to_string(c));
  }
  if (n < k) {
    throw std::invalid_argument("fit_pca_exact: " + std::to_string(n) + " samples for k=" + std::to_string(k));
  }
  PcaModel model;
  model.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - model.mean.transpose();
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("fit_pca_exact: eigendecomposition failed");
  model.components.resize(k, c);
  model.explained_variance.resize(k);
  model.singular_values.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index src = c - 1 - i;  // eigenvalues ascend
    model.components.row(i) = eig.eigenvectors().col(src).transpose();
    const double var = std::max(0.0, eig.eigenvalues()(src));
    model.explained_variance(i) = var;
    model.singular_values(i) = std::sqrt(var * denom);
  }
  apply_sign_convention(model.components);
  model.samples_seen = n;
  return model;
}

IncrementalPca::IncrementalPca(Eigen::Index k, Eigen::Index oversample) : k_(k), oversample_(oversample) {
  if (k < 1) throw std::invalid_argument("IncrementalPca: k must be positive");
  if (oversample < 0 && oversample != kKeepAll) {
    throw std::invalid_argument("IncrementalPca: oversample must be nonnegative");
  }
}

void IncrementalPca::partial_fit(const Eigen::Ref<const Eigen::MatrixXd>& batch) {
  const Eigen::Index b = batch.rows(), c = batch.cols();
  if (b < 1) throw std::invalid_argument("IncrementalPca: empty batch");
  if (k_ > c) {
    throw std::invalid_argument("IncrementalPca: k=" + std::to_string(k_) + " exceeds feature dimension " +
                                std::to_string(c));
  }
  if (seen_ > 0 && c != mean_.size()) {
    throw std::invalid_argument("IncrementalPca: batch dimension " + std::to_string(c) + " != " +
                                std::to_string(mean_.size()));
  }
  const Eigen::VectorXd batch_mean = batch.colwise().mean().transpose();
  const double n_old = static_cast<double>(seen_);
  const double n_new = n_old + static_cast<double>(b);

  Eigen::MatrixXd stacked;
  if (seen_ == 0) {
    stacked = batch.rowwise() - batch_mean.transpose();
    mean_ = batch_mean;
  } else {
    const Eigen::Index kc = components_.rows();
    stacked.resize(kc + b + 1, c);
    stacked.topRows(kc) = singular_values_.asDiagonal() * components_;
    stacked.middleRows(kc, b) = batch.rowwise() - batch_mean.transpose();
    stacked.bottomRows(1) =
        std::sqrt(n_old * static_cast<double>(b) / n_new) * (mean_ - batch_mean).transpose();
    mean_ = (n_old * mean_ + static_cast<double>(b) * batch_mean) / n_new;
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinV);
  const Eigen::Index rank = svd.singularValues().size();
  const Eigen::Index keep = oversample_ == kKeepAll ? rank : std::min<Eigen::Index>(k_ + oversample_, rank);
  components_ = svd.matrixV().leftCols(keep).transpose();
  singular_values_ = svd.singularValues().head(keep);
  // Keep the factorization consistent with the sign flips.
  apply_sign_convention(components_);
  seen_ += b;
}

PcaModel IncrementalPca::model() const {
  if (seen_ < k_ || components_.rows() < k_) {
    throw std::logic_error("IncrementalPca: " + std::to_string(seen_) + " samples seen, need at least " +
                           std::to_string(k_));
  }
  PcaModel m;
  m.mean = mean_;
  m.components = components_.topRows(k_);
  m.singular_values = singular_values_.head(k_);
  const double denom = seen_ > 1 ? static_cast<double>(seen_ - 1) : 1.0;
  m.explained_variance = m.singular_values.array().square() / denom;
  m.samples_seen = seen_;
  return m;
}

PcaModel fit_pca_incremental(const Eigen::Ref<const Eigen::MatrixXd>& samples, Eigen::Index k,
                             Eigen::Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("fit_pca_incremental: batch_size must be positive");
  if (k > samples.cols()) {
    throw std::invalid_argument("fit_pca_incremental: k=" + std::to_string(k) +
                                " exceeds feature dimension " + std::to_string(samples.cols()));
  }
  IncrementalPca ipca(k);
  for (Eigen::Index start = 0; start < samples.rows(); start += batch_size) {
    const Eigen::Index len = std::min(batch_size, samples.rows() - start);
    ipca.partial_fit(samples.middleRows(start, len));
  }
  return ipca.model();
}

Eigen::VectorXd project(const PcaModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != model.dim()) {
    throw std::invalid_argument("project: vector of dimension " + std::to_string(x.size()) +
                                " for model of dimension " + std::to_string(model.dim()));
  }
  return model.components * (x - model.mean);
}

}  // namespace mvgen
