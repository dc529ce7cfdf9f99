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
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gfdann/errors.hpp"

namespace gfdann {

// Dense row-major tensor of doubles.  The last axis is contiguous.
// All numeric state in the toolkit (signals, covariances, network
// parameters, gradients) lives in this type.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}

  Tensor(std::initializer_list<std::size_t> s, double fill = 0.0)
      : shape(s), data(count(shape), fill) {}

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // Row-major flat offsets.
  std::size_t at2(std::size_t i, std::size_t j) const { return i * shape[1] + j; }
  std::size_t at3(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * shape[1] + j) * shape[2] + k;
  }
  std::size_t at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return ((i * shape[1] + j) * shape[2] + k) * shape[3] + l;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[at2(i, j)]; }
  double operator()(std::size_t i, std::size_t j) const { return data[at2(i, j)]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) { return data[at3(i, j, k)]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data[at3(i, j, k)]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data[at4(i, j, k, l)];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data[at4(i, j, k, l)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // Exact comparison, used by determinism and round-trip checks.
  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
  bool operator!=(const Tensor& o) const { return !(*this == o); }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << ',';
      os << shape[i];
    }
    os << ')';
    return os.str();
  }
};

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) +
                         " tensor, got shape " + t.shape_string());
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_string() +
                         " vs " + b.shape_string());
  }
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

}  // namespace gfdann
