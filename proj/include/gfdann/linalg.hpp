/*
 * Copyright 2026 GFDANN Toolkit Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "gfdann/errors.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

inline void require_square(const Tensor& a, const char* what) {
  require_rank(a, 2, what);
  if (a.dim(0) != a.dim(1)) {
    throw DimensionError(std::string(what) + ": matrix must be square, got " + a.shape_string());
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dims differ, " + a.shape_string() + " vs " +
                         b.shape_string());
  }
  std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      double s = a(i, l);
      const double* br = &b.data[l * m];
      double* cr = &c.data[i * m];
      for (std::size_t j = 0; j < m; ++j) cr[j] += s * br[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
  }
  return t;
}

// Eigendecomposition of a symmetric matrix.  values are sorted
// descending; column j of `vectors` is the eigenvector for values[j].
struct SymEig {
  std::vector<double> values;
  Tensor vectors;
};

// Cyclic Jacobi rotations.  Intended for the small matrices this
// toolkit works with (EEG channel counts); quadratically convergent and
// fully deterministic.
inline SymEig jacobi_eigendecomposition(const Tensor& input, int max_sweeps = 100) {
  require_square(input, "jacobi_eigendecomposition");
  std::size_t n = input.dim(0);
  Tensor a = input;
  Tensor v({n, n});
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double frob = 0.0;
  for (double x : a.data) frob += x * x;
  frob = std::sqrt(frob);
  double tol = 1e-14 * std::max(frob, 1.0);

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    }
    return std::sqrt(2.0 * s);
  };

  int sweep = 0;
  while (off_norm() > tol) {
    if (++sweep > max_sweeps) {
      throw NumericalError("jacobi_eigendecomposition: no convergence after " +
                           std::to_string(max_sweeps) + " sweeps");
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (std::abs(apq) <= tol / static_cast<double>(n * n)) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });

  SymEig out;
  out.values.resize(n);
  out.vectors = Tensor({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = diag[order[j]];
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

// Lower-triangular Cholesky factor of a symmetric positive-definite
// matrix.  Fails with guidance when the matrix is not positive definite
// (the usual cause here is an unregularized rank-deficient covariance).
inline Tensor cholesky_lower(const Tensor& a) {
  require_square(a, "cholesky_lower");
  std::size_t n = a.dim(0);
  Tensor l({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0)) {
          throw NumericalError(
              "cholesky_lower: matrix not positive definite (pivot " + std::to_string(s) +
              " at index " + std::to_string(i) +
              "); raise the covariance regularization");
        }
        l(i, j) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

// Solves L y = b in place (L lower triangular).
inline void solve_lower_inplace(const Tensor& l, std::vector<double>& b) {
  std::size_t n = l.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * b[k];
    b[i] = s / l(i, i);
  }
}

// Solves L^T x = b in place.
inline void solve_lower_transposed_inplace(const Tensor& l, std::vector<double>& b) {
  std::size_t n = l.dim(0);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * b[k];
    b[ii] = s / l(ii, ii);
  }
}

}  // namespace gfdann
