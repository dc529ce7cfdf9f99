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
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "gfdann/csp.hpp"
#include "gfdann/epochs.hpp"
#include "gfdann/errors.hpp"
#include "gfdann/filters.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

// Frequency bands [(fmin, fmin+width), (fmin+step, ...), ...] whose
// upper edges stay within fmax.
inline std::vector<std::pair<double, double>> make_frequency_bands(double fmin, double fmax,
                                                                   double width, double step) {
  if (!(width > 0.0) || !(step > 0.0) || !(fmin + width <= fmax)) {
    throw ConfigError("make_frequency_bands: need width > 0, step > 0, fmin + width <= fmax");
  }
  std::vector<std::pair<double, double>> bands;
  for (std::size_t k = 0;; ++k) {
    double lo = fmin + static_cast<double>(k) * step;
    double hi = lo + width;
    if (hi > fmax + 1e-9) break;
    bands.emplace_back(lo, hi);
  }
  return bands;
}

// Time windows [(0, width), (step, step+width), ...] in seconds, ends
// within the epoch length.
inline std::vector<std::pair<double, double>> make_time_bands(double epoch_length, double width,
                                                              double step) {
  if (!(width > 0.0) || !(step > 0.0) || !(width <= epoch_length)) {
    throw ConfigError("make_time_bands: need 0 < width <= epoch_length and step > 0");
  }
  std::vector<std::pair<double, double>> bands;
  for (std::size_t k = 0;; ++k) {
    double start = static_cast<double>(k) * step;
    double end = start + width;
    if (end > epoch_length + 1e-9) break;
    bands.emplace_back(start, end);
  }
  return bands;
}

// The (frequency band, time window) grid behind the feature tensor's K
// and T axes.  Cell (k, t) is indexed k * time_bands.size() + t.
struct BandGrid {
  std::vector<std::pair<double, double>> frequency_bands;  // Hz
  std::vector<std::pair<double, double>> time_bands;       // seconds

  std::size_t cells() const { return frequency_bands.size() * time_bands.size(); }

  void validate() const {
    if (frequency_bands.empty() || time_bands.empty()) {
      throw ConfigError("BandGrid: empty band list");
    }
    for (std::size_t i = 0; i < frequency_bands.size(); ++i) {
      const auto& [lo, hi] = frequency_bands[i];
      if (!(lo < hi)) throw ConfigError("BandGrid: frequency band low must be below high");
      if (i > 0 && frequency_bands[i - 1].first > lo) {
        throw ConfigError("BandGrid: frequency bands must be ordered");
      }
    }
    for (std::size_t i = 0; i < time_bands.size(); ++i) {
      const auto& [lo, hi] = time_bands[i];
      if (!(lo < hi)) throw ConfigError("BandGrid: time window start must be before end");
      if (i > 0 && time_bands[i - 1].first > lo) {
        throw ConfigError("BandGrid: time windows must be ordered");
      }
    }
  }
};

// Default grid: 2-30 Hz in 4 Hz bands stepped by 2 Hz, 0.5 s windows
// stepped by 0.5 s.
inline BandGrid default_band_grid(double epoch_length) {
  BandGrid g;
  g.frequency_bands = make_frequency_bands(2.0, 30.0, 4.0, 2.0);
  g.time_bands = make_time_bands(epoch_length, 0.5, 0.5);
  g.validate();
  return g;
}

// Feature extraction settings: broadband preprocessing, CSP component
// selection, and the power transform.
struct FeatureSettings {
  std::size_t n_components = 5;
  double regularization = 1e-6;  // ridge as a fraction of covariance trace
  bool log_power = false;        // mean power by default; log behind this flag
  bool both_ends = false;        // leading eigenvalues by default
  bool preprocess = true;        // broadband band-pass before banding
  double bandpass_low = 0.5;
  double bandpass_high = 70.0;
  bool notch = true;             // power-line band-stop
  double notch_low = 48.0;
  double notch_high = 52.0;

  void validate(double sample_rate) const {
    if (n_components == 0) throw ConfigError("FeatureSettings: n_components must be positive");
    if (!(regularization >= 0.0)) {
      throw ConfigError("FeatureSettings: regularization must be >= 0");
    }
    if (preprocess && !(bandpass_high < sample_rate / 2.0)) {
      throw ConfigError("FeatureSettings: broadband edge exceeds Nyquist");
    }
    if (notch && !(notch_high < sample_rate / 2.0)) {
      throw ConfigError("FeatureSettings: notch edge exceeds Nyquist");
    }
  }
};

// Per-epoch second-moment matrices, one per grid cell, plus provenance.
// Powers of linear spatial filters are quadratic forms in these, so they
// are a lossless intermediate for both CSP fitting and feature output.
struct EpochCellMoments {
  int subject_id = -1;
  int group = kGroupHealthy;
  int domain = kDomainSource;
  int epoch_index = 0;
  std::vector<Tensor> moments;  // grid.cells() matrices (channels, channels)
};

// One shallow feature tensor with provenance.
struct FeatureSample {
  Tensor values;  // (C, K, T)
  int subject_id = -1;
  int group = kGroupHealthy;
  int domain = kDomainSource;
  int epoch_index = 0;
};

// Fitted CSP bank over a grid.
struct CspFilterBank {
  std::size_t channels = 0;
  std::size_t n_components = 0;
  std::vector<CspResult> cells;  // grid.cells() entries

  bool operator==(const CspFilterBank& o) const {
    if (channels != o.channels || n_components != o.n_components ||
        cells.size() != o.cells.size()) {
      return false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].filters != o.cells[i].filters ||
          cells[i].eigenvalues != o.cells[i].eigenvalues) {
        return false;
      }
    }
    return true;
  }
};

// Broadband band-pass plus power-line notch on a raw (channels, time)
// epoch, ahead of the band decomposition.
inline Tensor preprocess_epoch(const Tensor& samples, double sample_rate,
                               const FeatureSettings& settings) {
  Tensor out = samples;
  if (settings.preprocess) {
    out = bandpass_filter(out, settings.bandpass_low, settings.bandpass_high, sample_rate);
  }
  if (settings.notch) {
    out = notch_filter(out, settings.notch_low, settings.notch_high, sample_rate);
  }
  return out;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> window_sample_range(std::pair<double, double> window,
                                                               double sample_rate,
                                                               std::size_t total) {
  auto lo = static_cast<std::size_t>(std::llround(window.first * sample_rate));
  auto hi = static_cast<std::size_t>(std::llround(window.second * sample_rate));
  if (hi > total || lo >= hi) {
    throw DimensionError("band window [" + std::to_string(window.first) + ", " +
                         std::to_string(window.second) + ")s exceeds the epoch");
  }
  return {lo, hi};
}

inline Tensor slice_columns(const Tensor& m, std::size_t lo, std::size_t hi) {
  std::size_t ch = m.dim(0), t = m.dim(1), w = hi - lo;
  Tensor out({ch, w});
  for (std::size_t c = 0; c < ch; ++c) {
    std::copy(&m.data[c * t + lo], &m.data[c * t + hi], &out.data[c * w]);
  }
  return out;
}

}  // namespace detail

// Band-filters a preprocessed epoch per frequency band and slices each
// time window: grid.cells() windows indexed k * T + t.
inline std::vector<Tensor> band_windows(const Tensor& preprocessed, double sample_rate,
                                        const BandGrid& grid) {
  grid.validate();
  std::vector<Tensor> out;
  out.reserve(grid.cells());
  std::size_t total = preprocessed.dim(1);
  for (const auto& band : grid.frequency_bands) {
    Tensor banded = bandpass_filter(preprocessed, band.first, band.second, sample_rate);
    for (const auto& window : grid.time_bands) {
      auto [lo, hi] = detail::window_sample_range(window, sample_rate, total);
      out.push_back(detail::slice_columns(banded, lo, hi));
    }
  }
  return out;
}

// Computes the per-cell second moments of one epoch.
inline EpochCellMoments compute_cell_moments(const Epoch& epoch, const BandGrid& grid,
                                             const FeatureSettings& settings) {
  settings.validate(epoch.sample_rate);
  EpochCellMoments out;
  out.subject_id = epoch.subject_id;
  out.group = epoch.group;
  out.domain = epoch.domain;
  out.epoch_index = epoch.epoch_index;
  Tensor pre = preprocess_epoch(epoch.samples, epoch.sample_rate, settings);
  for (Tensor& w : band_windows(pre, epoch.sample_rate, grid)) {
    out.moments.push_back(second_moment(w));
  }
  return out;
}

// Fits the per-cell CSP bank from training epochs' moments.  Class A is
// the aMCI group, class B the HC group.
inline CspFilterBank fit_csp_bank(std::span<const EpochCellMoments* const> train,
                                  const BandGrid& grid, const FeatureSettings& settings) {
  grid.validate();
  std::size_t cells = grid.cells();
  std::size_t n_a = 0, n_b = 0;
  for (const EpochCellMoments* e : train) {
    if (e->moments.size() != cells) {
      throw DimensionError("fit_csp_bank: epoch moments do not match the grid");
    }
    (e->group == kGroupAmci ? n_a : n_b) += 1;
  }
  if (n_a < 2 || n_b < 2) {
    throw DataError("fit_csp_bank: need at least 2 epochs per class, got " +
                    std::to_string(n_a) + " aMCI and " + std::to_string(n_b) + " HC");
  }
  std::size_t ch = train.front()->moments.front().dim(0);

  CspFilterBank bank;
  bank.channels = ch;
  bank.n_components = settings.n_components;
  bank.cells.reserve(cells);
  Tensor sa({ch, ch}), sb({ch, ch});
  for (std::size_t cell = 0; cell < cells; ++cell) {
    sa.fill(0.0);
    sb.fill(0.0);
    for (const EpochCellMoments* e : train) {
      const Tensor& m = e->moments[cell];
      double tr = trace_of(m);
      if (!(tr > 0.0)) {
        throw NumericalError("fit_csp_bank: zero-power epoch in cell " + std::to_string(cell));
      }
      Tensor& dst = e->group == kGroupAmci ? sa : sb;
      for (std::size_t i = 0; i < m.size(); ++i) dst[i] += m[i] / tr;
    }
    for (double& v : sa.data) v /= static_cast<double>(n_a);
    for (double& v : sb.data) v /= static_cast<double>(n_b);
    bank.cells.push_back(fit_csp_from_covariances(sa, sb, settings.n_components,
                                                  settings.regularization, settings.both_ends));
  }
  return bank;
}

// Average power of each spatial component over each cell window, as the
// quadratic form w S w^T in the cell's second moment.
inline FeatureSample power_features(const EpochCellMoments& epoch, const CspFilterBank& bank,
                                    bool log_power) {
  if (epoch.moments.size() != bank.cells.size()) {
    throw DimensionError("power_features: epoch moments do not match the fitted bank");
  }
  std::size_t cells = bank.cells.size();
  std::size_t c_dim = bank.n_components;
  FeatureSample out;
  out.subject_id = epoch.subject_id;
  out.group = epoch.group;
  out.domain = epoch.domain;
  out.epoch_index = epoch.epoch_index;
  out.values = Tensor({c_dim, cells});  // reshaped to (C, K, T) by the caller's grid
  std::size_t ch = bank.channels;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const Tensor& s = epoch.moments[cell];
    if (s.dim(0) != ch) {
      throw DimensionError("power_features: channel count does not match the bank");
    }
    const Tensor& w = bank.cells[cell].filters;
    for (std::size_t c = 0; c < c_dim; ++c) {
      const double* wc = &w.data[c * ch];
      double acc = 0.0;
      for (std::size_t i = 0; i < ch; ++i) {
        double si = 0.0;
        const double* srow = &s.data[i * ch];
        for (std::size_t j = 0; j < ch; ++j) si += srow[j] * wc[j];
        acc += wc[i] * si;
      }
      if (acc < 0.0) acc = 0.0;  // PSD quadratic form; clear roundoff dust
      out.values(c, cell) = log_power ? std::log(std::max(acc, 1e-20)) : acc;
    }
  }
  return out;
}

namespace detail {

inline Tensor reshape_cells(const Tensor& flat, std::size_t k, std::size_t t) {
  Tensor out({flat.dim(0), k, t});
  out.data = flat.data;  // cell index is already k * t + t_idx, row-major
  return out;
}

}  // namespace detail

// Full single-epoch transform against a fitted bank: (C, K, T) tensor.
inline FeatureSample extract_feature_tensor(const Epoch& epoch, const BandGrid& grid,
                                            const CspFilterBank& bank,
                                            const FeatureSettings& settings) {
  if (bank.cells.size() != grid.cells() || bank.channels != epoch.samples.dim(0)) {
    throw DimensionError("extract_feature_tensor: bank does not match grid/epoch geometry");
  }
  EpochCellMoments m = compute_cell_moments(epoch, grid, settings);
  FeatureSample s = power_features(m, bank, settings.log_power);
  s.values = detail::reshape_cells(s.values, grid.frequency_bands.size(), grid.time_bands.size());
  return s;
}

// Fold-level features: CSP bank fitted from training epochs only, both
// splits transformed with that bank.
struct FoldFeatures {
  std::vector<FeatureSample> train;
  std::vector<FeatureSample> test;
  CspFilterBank bank;
};

inline FoldFeatures build_fold_features(std::span<const Epoch> train_epochs,
                                        std::span<const Epoch> test_epochs, const BandGrid& grid,
                                        const FeatureSettings& settings) {
  std::set<int> train_subjects, test_subjects;
  for (const Epoch& e : train_epochs) train_subjects.insert(e.subject_id);
  for (const Epoch& e : test_epochs) test_subjects.insert(e.subject_id);
  for (int sid : test_subjects) {
    if (train_subjects.count(sid) != 0) {
      throw DataError("build_fold_features: leakage, subject " + std::to_string(sid) +
                      " appears in both splits");
    }
  }

  std::vector<EpochCellMoments> train_moments;
  train_moments.reserve(train_epochs.size());
  for (const Epoch& e : train_epochs) {
    train_moments.push_back(compute_cell_moments(e, grid, settings));
  }
  std::vector<const EpochCellMoments*> train_ptrs;
  train_ptrs.reserve(train_moments.size());
  for (const EpochCellMoments& m : train_moments) train_ptrs.push_back(&m);

  FoldFeatures out;
  out.bank = fit_csp_bank(train_ptrs, grid, settings);
  std::size_t k = grid.frequency_bands.size(), t = grid.time_bands.size();
  for (const EpochCellMoments& m : train_moments) {
    FeatureSample s = power_features(m, out.bank, settings.log_power);
    s.values = detail::reshape_cells(s.values, k, t);
    out.train.push_back(std::move(s));
  }
  for (const Epoch& e : test_epochs) {
    EpochCellMoments m = compute_cell_moments(e, grid, settings);
    FeatureSample s = power_features(m, out.bank, settings.log_power);
    s.values = detail::reshape_cells(s.values, k, t);
    out.test.push_back(std::move(s));
  }
  return out;
}

}  // namespace gfdann
