#pragma once

#include "mvgen/tensor.hpp"

namespace mvgen {

template <typename Scalar>
using ConstMatrixRef = Eigen::Ref<const RowMatrix<Scalar>>;

template <typename Scalar>
void softmax_rows_inplace(RowMatrix<Scalar>& m);

/// Softmax(Q Kᵀ / √d) V for Q: n×d and K, V: n'×d.
template <typename Scalar>
RowMatrix<Scalar> softmax_attention(const ConstMatrixRef<Scalar>& q, const ConstMatrixRef<Scalar>& k,
                                    const ConstMatrixRef<Scalar>& v);

/// Same as softmax_attention with the softmax replaced by a one-hot argmax
/// over the scaled logits. Ties go to the lowest key index.
template <typename Scalar>
RowMatrix<Scalar> argmax_attention(const ConstMatrixRef<Scalar>& q, const ConstMatrixRef<Scalar>& k,
                                   const ConstMatrixRef<Scalar>& v);

// Queries of the current view against keys/values of a reference view.
template <typename Scalar>
RowMatrix<Scalar> cross_frame_attention(const ConstMatrixRef<Scalar>& q, const ConstMatrixRef<Scalar>& k_ref,
                                        const ConstMatrixRef<Scalar>& v_ref) {
  return softmax_attention<Scalar>(q, k_ref, v_ref);
}

template <typename Scalar>
RowMatrix<Scalar> hard_attention(const ConstMatrixRef<Scalar>& q, const ConstMatrixRef<Scalar>& k_ref,
                                 const ConstMatrixRef<Scalar>& v_ref) {
  return argmax_attention<Scalar>(q, k_ref, v_ref);
}

}  // namespace mvgen
