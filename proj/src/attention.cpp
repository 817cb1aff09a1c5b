#include "mvgen/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace mvgen {

namespace {

template <typename Scalar>
void check_qkv(const ConstMatrixRef<Scalar>& q, const ConstMatrixRef<Scalar>& k,
               const ConstMatrixRef<Scalar>& v) {
  if (q.rows() < 1 || k.rows() < 1) throw std::invalid_argument("attention: empty query or key set");
  if (q.cols() != k.cols()) {
    throw std::invalid_argument("attention: query dim " + std::to_string(q.cols()) +
                                " != key dim " + std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: key/value count mismatch");
}

}  // namespace

template <typename Scalar>
void softmax_rows_inplace(RowMatrix<Scalar>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const Scalar mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
  }
}

template <typename Scalar>
RowMatrix<Scalar> softmax_attention(const ConstMatrixRef<Scalar>& q, const ConstMatrixRef<Scalar>& k,
                                    const ConstMatrixRef<Scalar>& v) {
  check_qkv<Scalar>(q, k, v);
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  RowMatrix<Scalar> logits = (q * k.transpose()) * inv_sqrt_d;
  softmax_rows_inplace(logits);
  return logits * v;
}

template <typename Scalar>
RowMatrix<Scalar> argmax_attention(const ConstMatrixRef<Scalar>& q, const ConstMatrixRef<Scalar>& k,
                                   const ConstMatrixRef<Scalar>& v) {
  check_qkv<Scalar>(q, k, v);
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  const RowMatrix<Scalar> logits = (q * k.transpose()) * inv_sqrt_d;
  RowMatrix<Scalar> out(q.rows(), v.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out.row(r) = v.row(best);
  }
  return out;
}

#define MVGEN_INSTANTIATE(S)                                                                   \
  template void softmax_rows_inplace<S>(RowMatrix<S>&);                                       \
  template RowMatrix<S> softmax_attention<S>(const ConstMatrixRef<S>&, const ConstMatrixRef<S>&, \
                                             const ConstMatrixRef<S>&);                       \
  template RowMatrix<S> argmax_attention<S>(const ConstMatrixRef<S>&, const ConstMatrixRef<S>&,  \
                                            const ConstMatrixRef<S>&);
MVGEN_INSTANTIATE(float)
MVGEN_INSTANTIATE(double)
#undef MVGEN_INSTANTIATE

}  // namespace mvgen
