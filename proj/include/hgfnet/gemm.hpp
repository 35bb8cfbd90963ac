#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace hgf::gemm {

// Row-major C(m x n) = op(A) * op(B) (+ C when accumulate), where op(A) is
// (m x k) and op(B) is (k x n). A stored transposed means it is laid out as
// (k x m); same for B.
template <typename T>
void multiply(const T* a, bool a_transposed, const T* b, bool b_transposed, T* c,
              std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Mat>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> cm(c, M, N);
  if (!accumulate) cm.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!a_transposed && !b_transposed) {
    cm.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
  } else if (!a_transposed && b_transposed) {
    cm.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
  } else if (a_transposed && !b_transposed) {
    cm.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
  } else {
    cm.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
  }
}

}  // namespace hgf::gemm
