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

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gfdann/epochs.hpp"
#include "gfdann/errors.hpp"
#include "gfdann/filters.hpp"
#include "gfdann/rng.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

// Synthetic EEG generator settings.  Subjects are built from a shared
// base mixing matrix plus per-subject perturbations; the group contrast
// is a band-power difference between groups.
struct GeneratorConfig {
  std::size_t n_amci_subjects = 10;
  std::size_t n_hc_subjects = 9;
  std::size_t epochs_per_subject = 150;
  double epoch_length = 2.5;   // seconds
  double sample_rate = 300.0;  // Hz
  std::size_t channels = 20;
  double group_effect_size = 1.0;
  double individual_effect_size = 1.0;
  DomainShiftSpec domain_shift;
  std::uint64_t seed = 0;
};

// Latent source bands (Hz), spanning 2-30.
inline constexpr std::size_t kSourceCount = 8;
inline constexpr std::array<std::pair<double, double>, kSourceCount> kSourceBands{{
    {2.0, 6.0}, {4.0, 8.0}, {6.0, 10.0}, {8.0, 12.0},
    {10.0, 14.0}, {14.0, 18.0}, {18.0, 24.0}, {24.0, 30.0},
}};
inline constexpr std::size_t kThetaSource = 1;  // 4-8 Hz, raised in aMCI
inline constexpr std::size_t kAlphaSource = 3;  // 8-12 Hz, lowered in aMCI

// Generator shape constants.  These set how strongly the group contrast,
// the per-subject idiosyncrasies, and the sensor noise express relative
// to the unit-power sources; the config effect sizes scale them.
inline constexpr double kGroupBandFactor = 0.35;       // band-power contrast per unit effect
inline constexpr double kMixingPerturbation = 0.45;    // column-norm fraction per unit effect
inline constexpr double kBandIdiosyncrasy = 0.18;      // log-gain spread per unit effect
inline constexpr double kSensorNoise = 0.25;           // sensor noise floor
inline constexpr double kSensorNoiseJitter = 0.3;      // per-subject noise-level spread

// Seed stream tags.
inline constexpr std::uint64_t kStreamBaseMixing = 0x6d6978ULL;   // dataset-level mixing
inline constexpr std::uint64_t kStreamSubject = 0x737562ULL;      // per-subject profile
inline constexpr std::uint64_t kStreamEpoch = 0x65706fULL;        // per-epoch signals
inline constexpr std::uint64_t kStreamShift = 0x736866ULL;        // per-subject domain shift

// Per-subject generation profile.
struct SubjectProfile {
  int subject_id = -1;
  int group = kGroupHealthy;
  Tensor mixing_matrix;                  // (channels, sources)
  std::vector<double> band_power_profile;  // per-source gains, > 0
  double individual_noise_scale = kSensorNoise;
};

namespace detail {

inline void validate_generator_config(const GeneratorConfig& cfg) {
  if (cfg.n_amci_subjects == 0 || cfg.n_hc_subjects == 0 || cfg.epochs_per_subject == 0) {
    throw ConfigError("generate_dataset: subject and epoch counts must be positive");
  }
  if (cfg.channels == 0) {
    throw ConfigError("generate_dataset: channel count must be positive");
  }
  if (!(cfg.sample_rate > 2.0 * kSourceBands.back().second)) {
    throw ConfigError("generate_dataset: sample rate must exceed twice the top source band");
  }
  if (!(cfg.epoch_length > 0.0)) {
    throw ConfigError("generate_dataset: epoch length must be positive");
  }
  if (!(cfg.group_effect_size >= 0.0) || !(cfg.individual_effect_size >= 0.0)) {
    throw ConfigError("generate_dataset: effect sizes must be >= 0");
  }
  if (!(cfg.domain_shift.gain_drift >= 0.0) || !(cfg.domain_shift.noise_scale >= 0.0)) {
    throw ConfigError("generate_dataset: domain shift parameters must be >= 0");
  }
}

// Dataset-level base mixing: random Gaussian columns orthonormalized,
// so the base matrix has exactly full column rank.
inline Tensor base_mixing_matrix(std::size_t channels, std::uint64_t seed) {
  if (channels < kSourceCount) {
    throw ConfigError("generate_dataset: need at least " + std::to_string(kSourceCount) +
                      " channels for " + std::to_string(kSourceCount) + " sources");
  }
  Rng rng(seed);
  Tensor m = rng.gaussian_tensor({channels, kSourceCount});
  for (std::size_t j = 0; j < kSourceCount; ++j) {
    for (std::size_t prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < channels; ++i) dot += m(i, j) * m(i, prev);
      for (std::size_t i = 0; i < channels; ++i) m(i, j) -= dot * m(i, prev);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < channels; ++i) norm += m(i, j) * m(i, j);
    norm = std::sqrt(norm);
    if (!(norm > 1e-8)) {
      throw NumericalError("generate_dataset: base mixing column collapsed");
    }
    for (std::size_t i = 0; i < channels; ++i) m(i, j) /= norm;
  }
  return m;
}

}  // namespace detail

// Builds one subject's profile from the dataset base mixing and the
// subject's derived seed stream.
inline SubjectProfile make_subject_profile(const GeneratorConfig& cfg, const Tensor& base_mixing,
                                           int subject_id, int group) {
  Rng rng(derive_seed(cfg.seed, {kStreamSubject, static_cast<std::uint64_t>(subject_id)}));
  SubjectProfile p;
  p.subject_id = subject_id;
  p.group = group;

  // Mixing: base columns plus a per-subject perturbation whose expected
  // column norm is kMixingPerturbation * individual_effect_size (base
  // columns have unit norm).
  std::size_t ch = cfg.channels;
  p.mixing_matrix = base_mixing;
  double pert = cfg.individual_effect_size * kMixingPerturbation / std::sqrt(static_cast<double>(ch));
  for (double& v : p.mixing_matrix.data) v += pert * rng.gaussian();

  // Band gains: group contrast plus per-subject spectral idiosyncrasy.
  double contrast = 1.0 + cfg.group_effect_size * kGroupBandFactor;
  p.band_power_profile.assign(kSourceCount, 1.0);
  if (group == kGroupAmci) {
    p.band_power_profile[kThetaSource] *= contrast;
    p.band_power_profile[kAlphaSource] /= contrast;
  }
  for (double& g : p.band_power_profile) {
    g *= std::exp(cfg.individual_effect_size * kBandIdiosyncrasy * rng.gaussian());
  }

  p.individual_noise_scale =
      kSensorNoise * std::exp(cfg.individual_effect_size * kSensorNoiseJitter * rng.gaussian());
  return p;
}

// Generates one epoch for a subject: band-limited Gaussian sources at
// the profile's gains, mixed to channels, plus sensor noise.
inline Tensor synthesize_epoch(const SubjectProfile& profile, const GeneratorConfig& cfg,
                               const std::vector<SosFilter>& source_filters, Rng& rng) {
  std::size_t n = static_cast<std::size_t>(std::llround(cfg.epoch_length * cfg.sample_rate));
  std::size_t ch = cfg.channels;
  Tensor sources({kSourceCount, n});
  std::vector<double> white(n);
  for (std::size_t s = 0; s < kSourceCount; ++s) {
    for (double& v : white) v = rng.gaussian();
    std::vector<double> banded = filtfilt(source_filters[s], white);
    double rms = 0.0;
    for (double v : banded) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(n));
    double gain = profile.band_power_profile[s] / std::max(rms, 1e-12);
    for (std::size_t t = 0; t < n; ++t) sources(s, t) = gain * banded[t];
  }
  Tensor x({ch, n});
  for (std::size_t i = 0; i < ch; ++i) {
    double* xi = &x.data[i * n];
    for (std::size_t s = 0; s < kSourceCount; ++s) {
      double w = profile.mixing_matrix(i, s);
      const double* src = &sources.data[s * n];
      for (std::size_t t = 0; t < n; ++t) xi[t] += w * src[t];
    }
  }
  for (double& v : x.data) v += profile.individual_noise_scale * rng.gaussian();
  return x;
}

// Generates a full deterministic dataset.  aMCI subjects get ids
// [0, m), HC subjects [m, m+n).
inline EpochSet generate_dataset(const GeneratorConfig& cfg) {
  detail::validate_generator_config(cfg);

  std::vector<SosFilter> source_filters;
  source_filters.reserve(kSourceCount);
  for (const auto& [lo, hi] : kSourceBands) {
    source_filters.push_back(design_bandpass(lo, hi, cfg.sample_rate));
  }

  Tensor base = detail::base_mixing_matrix(cfg.channels, derive_seed(cfg.seed, {kStreamBaseMixing}));

  EpochSet set;
  set.sample_rate = cfg.sample_rate;
  set.channels = cfg.channels;
  set.epoch_samples = static_cast<std::size_t>(std::llround(cfg.epoch_length * cfg.sample_rate));
  set.seed = cfg.seed;
  set.domain_shift = cfg.domain_shift;

  std::size_t total = cfg.n_amci_subjects + cfg.n_hc_subjects;
  for (std::size_t s = 0; s < total; ++s) {
    int sid = static_cast<int>(s);
    int group = s < cfg.n_amci_subjects ? kGroupAmci : kGroupHealthy;
    SubjectProfile profile = make_subject_profile(cfg, base, sid, group);
    for (std::size_t v = 0; v < cfg.epochs_per_subject; ++v) {
      Rng erng(derive_seed(cfg.seed, {kStreamEpoch, static_cast<std::uint64_t>(sid), v}));
      Epoch e;
      e.samples = synthesize_epoch(profile, cfg, source_filters, erng);
      e.sample_rate = cfg.sample_rate;
      e.subject_id = sid;
      e.group = group;
      e.domain = kDomainSource;
      e.epoch_index = static_cast<int>(v);
      set.epochs.push_back(std::move(e));
    }
  }
  return set;
}

// Splits a dataset into source and target domains for one held-out
// subject.  Target epochs receive the dataset's domain shift: a
// per-channel multiplicative gain drawn once per target subject from
// 1 +/- gain_drift, plus additive white noise.  The split is a pure
// function of (dataset seed, target subject).
inline std::pair<EpochSet, EpochSet> split_domains(const EpochSet& set, int target_subject) {
  bool found = false;
  for (const Epoch& e : set.epochs) {
    if (e.subject_id == target_subject) {
      found = true;
      break;
    }
  }
  if (!found) {
    throw DataError("split_domains: unknown subject " + std::to_string(target_subject));
  }

  EpochSet source = set;
  source.epochs.clear();
  EpochSet target = source;

  Rng shift_rng(
      derive_seed(set.seed, {kStreamShift, static_cast<std::uint64_t>(target_subject)}));
  std::vector<double> gains(set.channels);
  for (double& g : gains) g = 1.0 + set.domain_shift.gain_drift * shift_rng.uniform(-1.0, 1.0);

  for (const Epoch& e : set.epochs) {
    if (e.subject_id != target_subject) {
      source.epochs.push_back(e);
      continue;
    }
    Epoch t = e;
    t.domain = kDomainTarget;
    std::size_t n = t.samples.dim(1);
    for (std::size_t c = 0; c < set.channels; ++c) {
      double* row = &t.samples.data[c * n];
      for (std::size_t i = 0; i < n; ++i) {
        row[i] = gains[c] * row[i] + set.domain_shift.noise_scale * shift_rng.gaussian();
      }
    }
    target.epochs.push_back(std::move(t));
  }
  return {std::move(source), std::move(target)};
}

}  // namespace gfdann
