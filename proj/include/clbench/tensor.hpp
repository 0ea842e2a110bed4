#pragma once

// Dense row-major tensor, the sole numeric currency of the framework.
// Training runs in float; a double instantiation exists for gradient
// checking. Matrix products are delegated to Eigen.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace clbench {

template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}
  TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }
  static TensorT full(std::vector<int> s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // 2-D accessors (rows = dim 0).
  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  static std::int64_t checked_numel(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
      n *= d;
    }
    return n;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// ---------------------------------------------------------------------------
// Matrix products (row-major). C[M x N] = alpha * op(A) * op(B) + beta * C.
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
using EigenMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                            0, Eigen::OuterStride<>>;
template <typename T>
using EigenMapMut = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                               0, Eigen::OuterStride<>>;
}  // namespace detail

// General strided GEMM. Leading dimensions are row strides of the stored
// (untransposed) matrices.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
  detail::EigenMap<T> A(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  detail::EigenMap<T> B(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  detail::EigenMapMut<T> C(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == T(0)) {
    if (trans_a && trans_b)
      C.noalias() = alpha * (A.transpose() * B.transpose());
    else if (trans_a)
      C.noalias() = alpha * (A.transpose() * B);
    else if (trans_b)
      C.noalias() = alpha * (A * B.transpose());
    else
      C.noalias() = alpha * (A * B);
  } else {
    if (beta != T(1)) C *= beta;
    if (trans_a && trans_b)
      C.noalias() += alpha * (A.transpose() * B.transpose());
    else if (trans_a)
      C.noalias() += alpha * (A.transpose() * B);
    else if (trans_b)
      C.noalias() += alpha * (A * B.transpose());
    else
      C.noalias() += alpha * (A * B);
  }
}

}  // namespace clbench
