#pragma once

#include <cmath>
#include <stdexcept>

#include "cfscm/tensor.hpp"

namespace cfscm {

struct SingularMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RankDeficient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rank-2 tensors as matrices; the few dense kernels the GLM and the linear
// autoencoder need.
namespace linalg {

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    throw std::invalid_argument("matmul: shape mismatch");
  const std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      double av = a.at2(i, l);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c.at2(i, j) += av * b.at2(l, j);
    }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  Tensor t({a.shape[1], a.shape[0]});
  for (std::size_t i = 0; i < a.shape[0]; ++i)
    for (std::size_t j = 0; j < a.shape[1]; ++j) t.at2(j, i) = a.at2(i, j);
  return t;
}

// In-place LDL^T (unit lower L, diagonal D stored on l's diagonal); throws
// SingularMatrix when a pivot degenerates. Square-root free, so rational
// inputs stay exact through the factorization.
inline Tensor ldlt(const Tensor& a, double pivot_tol = 0.0) {
  const std::size_t n = a.shape[0];
  if (a.rank() != 2 || a.shape[1] != n)
    throw std::invalid_argument("ldlt: square matrix required");
  Tensor l({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a.at2(i, j);
      for (std::size_t k = 0; k < j; ++k)
        s -= l.at2(i, k) * l.at2(j, k) * l.at2(k, k);
      if (i == j) {
        if (s <= pivot_tol)
          throw SingularMatrix("ldlt: non-positive pivot");
        l.at2(i, i) = s;
      } else {
        l.at2(i, j) = s / l.at2(j, j);
      }
    }
  }
  return l;
}

// Solves A X = B for SPD A via LDL^T; B may have many columns.
inline Tensor spd_solve(const Tensor& a, const Tensor& b,
                        double pivot_tol = 0.0) {
  Tensor l = ldlt(a, pivot_tol);
  const std::size_t n = l.shape[0], m = b.shape[1];
  Tensor x = b;
  // forward: L y = b (unit diagonal)
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      double s = x.at2(i, j);
      for (std::size_t k = 0; k < i; ++k) s -= l.at2(i, k) * x.at2(k, j);
      x.at2(i, j) = s;
    }
  // diagonal: D z = y
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < n; ++i) x.at2(i, j) /= l.at2(i, i);
  // backward: L^T x = z
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = n; i-- > 0;) {
      double s = x.at2(i, j);
      for (std::size_t k = i + 1; k < n; ++k) s -= l.at2(k, i) * x.at2(k, j);
      x.at2(i, j) = s;
    }
  return x;
}

inline Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at2(i, i) = 1.0;
  return t;
}

inline double frobenius_sq(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return s;
}

}  // namespace linalg
}  // namespace cfscm
