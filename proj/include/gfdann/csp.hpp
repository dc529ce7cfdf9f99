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

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "gfdann/errors.hpp"
#include "gfdann/linalg.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

// Spatial filters for one (frequency band, time window) cell.
// Row i of `filters` is a unit-norm spatial filter; eigenvalues[i] is
// the matching generalized eigenvalue of sigma_a w = lambda (sigma_a +
// sigma_b) w, sorted descending.
struct CspResult {
  Tensor filters;                   // (n_components, channels)
  std::vector<double> eigenvalues;  // length n_components
};

// Second-moment matrix X X^T / n_samples of a (channels, samples) window.
inline Tensor second_moment(const Tensor& window) {
  require_rank(window, 2, "second_moment");
  std::size_t ch = window.dim(0), t = window.dim(1);
  if (t == 0) throw DimensionError("second_moment: empty window");
  Tensor s({ch, ch});
  for (std::size_t i = 0; i < ch; ++i) {
    const double* ri = &window.data[i * t];
    for (std::size_t j = i; j < ch; ++j) {
      const double* rj = &window.data[j * t];
      double acc = 0.0;
      for (std::size_t k = 0; k < t; ++k) acc += ri[k] * rj[k];
      acc /= static_cast<double>(t);
      s(i, j) = acc;
      s(j, i) = acc;
    }
  }
  return s;
}

inline double trace_of(const Tensor& m) {
  double tr = 0.0;
  for (std::size_t i = 0; i < m.dim(0); ++i) tr += m(i, i);
  return tr;
}

// Covariance scaled to unit trace, the per-epoch normalization used
// before class averaging.
inline Tensor trace_normalized(const Tensor& cov) {
  require_square(cov, "trace_normalized");
  double tr = trace_of(cov);
  if (!(tr > 0.0)) {
    throw NumericalError("trace_normalized: non-positive trace (all-zero window?)");
  }
  Tensor out = cov;
  for (double& v : out.data) v /= tr;
  return out;
}

// Mean of trace-normalized second moments over a set of windows.
inline Tensor mean_class_covariance(std::span<const Tensor> windows) {
  if (windows.size() < 2) {
    throw DataError("mean_class_covariance: need at least 2 epochs per class, got " +
                    std::to_string(windows.size()));
  }
  Tensor acc;
  for (const Tensor& w : windows) {
    Tensor c = trace_normalized(second_moment(w));
    if (acc.size() == 0) {
      acc = std::move(c);
    } else {
      require_same_shape(acc, c, "mean_class_covariance");
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += c[i];
    }
  }
  for (double& v : acc.data) v /= static_cast<double>(windows.size());
  return acc;
}

namespace detail {

// Deterministic sign fix: first entry whose magnitude is significant
// must be positive.
inline void fix_sign(double* row, std::size_t n) {
  double mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, std::abs(row[i]));
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(row[i]) > 1e-12 * mx) {
      if (row[i] < 0.0) {
        for (std::size_t j = 0; j < n; ++j) row[j] = -row[j];
      }
      return;
    }
  }
}

}  // namespace detail

// Solves the CSP generalized eigenproblem sigma_a w = lambda (sigma_a +
// sigma_b) w via Cholesky reduction of the composite matrix and a Jacobi
// eigensolve of the reduced symmetric matrix.
//
// Each class covariance receives a ridge of regularization*trace on the
// diagonal first.  Components are the leading n_components by descending
// eigenvalue; with both_ends set, they are taken alternately from both
// ends of the spectrum (still reported in descending eigenvalue order).
// Returned filter rows have unit norm and a deterministic sign.
inline CspResult fit_csp_from_covariances(const Tensor& sigma_a, const Tensor& sigma_b,
                                          std::size_t n_components, double regularization,
                                          bool both_ends = false) {
  require_square(sigma_a, "fit_csp_from_covariances");
  require_same_shape(sigma_a, sigma_b, "fit_csp_from_covariances");
  std::size_t ch = sigma_a.dim(0);
  if (n_components == 0 || n_components > ch) {
    throw ConfigError("fit_csp_from_covariances: n_components must lie in [1, channels], got " +
                      std::to_string(n_components) + " for " + std::to_string(ch) + " channels");
  }
  if (!(regularization >= 0.0)) {
    throw ConfigError("fit_csp_from_covariances: regularization must be >= 0");
  }

  auto regularize = [&](const Tensor& s) {
    Tensor out = s;
    double ridge = regularization * trace_of(s);
    for (std::size_t i = 0; i < ch; ++i) out(i, i) += ridge;
    return out;
  };
  Tensor sa = regularize(sigma_a);
  Tensor sb = regularize(sigma_b);

  Tensor composite({ch, ch});
  for (std::size_t i = 0; i < composite.size(); ++i) {
    composite[i] = sa[i] + sb[i];
  }
  Tensor l = cholesky_lower(composite);

  // Reduced matrix C = L^{-1} sa L^{-T}, built column-solve by
  // column-solve and symmetrized against roundoff.
  Tensor m({ch, ch});
  std::vector<double> col(ch);
  for (std::size_t j = 0; j < ch; ++j) {
    for (std::size_t i = 0; i < ch; ++i) col[i] = sa(i, j);
    solve_lower_inplace(l, col);
    for (std::size_t i = 0; i < ch; ++i) m(i, j) = col[i];
  }
  Tensor c({ch, ch});
  for (std::size_t i = 0; i < ch; ++i) {
    for (std::size_t j = 0; j < ch; ++j) col[j] = m(i, j);
    solve_lower_inplace(l, col);
    for (std::size_t j = 0; j < ch; ++j) c(i, j) = col[j];
  }
  for (std::size_t i = 0; i < ch; ++i) {
    for (std::size_t j = i + 1; j < ch; ++j) {
      double v = 0.5 * (c(i, j) + c(j, i));
      c(i, j) = v;
      c(j, i) = v;
    }
  }

  SymEig eig = jacobi_eigendecomposition(c);

  std::vector<std::size_t> picks;
  if (both_ends) {
    std::size_t top = (n_components + 1) / 2;
    std::size_t bottom = n_components / 2;
    for (std::size_t i = 0; i < top; ++i) picks.push_back(i);
    for (std::size_t i = 0; i < bottom; ++i) picks.push_back(ch - bottom + i);
  } else {
    for (std::size_t i = 0; i < n_components; ++i) picks.push_back(i);
  }

  CspResult out;
  out.filters = Tensor({n_components, ch});
  out.eigenvalues.resize(n_components);
  for (std::size_t r = 0; r < picks.size(); ++r) {
    std::size_t j = picks[r];
    out.eigenvalues[r] = eig.values[j];
    for (std::size_t i = 0; i < ch; ++i) col[i] = eig.vectors(i, j);
    solve_lower_transposed_inplace(l, col);
    double norm = 0.0;
    for (double v : col) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) {
      throw NumericalError("fit_csp_from_covariances: degenerate eigenvector");
    }
    double* row = &out.filters.data[r * ch];
    for (std::size_t i = 0; i < ch; ++i) row[i] = col[i] / norm;
    detail::fix_sign(row, ch);
  }
  return out;
}

// Fits CSP from raw (channels, samples) windows: per-epoch
// trace-normalized covariances averaged per class, then the generalized
// eigensolve above.
inline CspResult fit_csp(std::span<const Tensor> class_a_windows,
                         std::span<const Tensor> class_b_windows, std::size_t n_components,
                         double regularization, bool both_ends = false) {
  if (class_a_windows.size() < 2 || class_b_windows.size() < 2) {
    throw DataError("fit_csp: need at least 2 epochs per class, got " +
                    std::to_string(class_a_windows.size()) + " and " +
                    std::to_string(class_b_windows.size()));
  }
  std::size_t ch = class_a_windows[0].dim(0);
  for (const Tensor& w : class_a_windows) {
    if (w.dim(0) != ch) throw DimensionError("fit_csp: channel counts differ between epochs");
  }
  for (const Tensor& w : class_b_windows) {
    if (w.dim(0) != ch) throw DimensionError("fit_csp: channel counts differ between epochs");
  }
  Tensor sa = mean_class_covariance(class_a_windows);
  Tensor sb = mean_class_covariance(class_b_windows);
  return fit_csp_from_covariances(sa, sb, n_components, regularization, both_ends);
}

}  // namespace gfdann
