#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace poseformer::detail {

/// c[m x n] (+)= op(a) * op(b), all row-major. op(a) is m x k; when `trans_a`
/// the buffer holds a k x m matrix (likewise for b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Mat>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> C(c, M, N);
  ConstMap A(a, trans_a ? K : M, trans_a ? M : K);
  ConstMap B(b, trans_b ? N : K, trans_b ? K : N);

  auto assign = [&](const auto& product) {
    if (accumulate) {
      C.noalias() += product;
    } else {
      C.noalias() = product;
    }
  };
  if (!trans_a && !trans_b) {
    assign(A * B);
  } else if (!trans_a && trans_b) {
    assign(A * B.transpose());
  } else if (trans_a && !trans_b) {
    assign(A.transpose() * B);
  } else {
    assign(A.transpose() * B.transpose());
  }
}

}  // namespace poseformer::detail
