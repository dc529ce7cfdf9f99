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
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gfdann/epochs.hpp"
#include "gfdann/errors.hpp"
#include "gfdann/linalg.hpp"
#include "gfdann/model.hpp"
#include "gfdann/rng.hpp"
#include "gfdann/shallow_features.hpp"
#include "gfdann/synth.hpp"
#include "gfdann/tensor.hpp"
#include "gfdann/training.hpp"

namespace gfdann {

// Subject-level verdict; a tied vote refuses to decide.
enum class Verdict { kHealthy = 0, kAmci = 1, kRefused = 2 };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kHealthy: return "hc";
    case Verdict::kAmci: return "amci";
    default: return "refused";
  }
}

// Majority vote over per-sample class predictions.
inline Verdict vote_subject(const std::vector<int>& predictions) {
  if (predictions.empty()) throw DataError("vote_subject: no sample predictions");
  std::size_t ones = 0;
  for (int p : predictions) {
    if (p != 0 && p != 1) {
      throw DataError("vote_subject: prediction " + std::to_string(p) + " is not a class label");
    }
    ones += static_cast<std::size_t>(p);
  }
  std::size_t zeros = predictions.size() - ones;
  if (ones > zeros) return Verdict::kAmci;
  if (zeros > ones) return Verdict::kHealthy;
  return Verdict::kRefused;
}

// Fraction of a subject's samples classified as the subject's group.
inline double confidence_probability(const std::vector<int>& predictions, int true_group) {
  if (predictions.empty()) throw DataError("confidence_probability: no sample predictions");
  if (true_group != 0 && true_group != 1) {
    throw DataError("confidence_probability: group label must be 0 or 1");
  }
  std::size_t correct = 0;
  for (int p : predictions) correct += static_cast<std::size_t>(p == true_group);
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

inline double average_confidence(const std::vector<double>& per_subject) {
  if (per_subject.empty()) throw DataError("average_confidence: no subjects");
  double sum = 0.0;
  for (double p : per_subject) sum += p;
  return sum / static_cast<double>(per_subject.size());
}

struct SubjectDiagnosis {
  int subject_id = 0;
  int true_group = 0;
  Verdict verdict = Verdict::kRefused;
  double confidence = 0.0;  // fraction of the subject's samples classified correctly
  std::size_t sample_count = 0;
};

// Subject-level metrics.  Sensitivity and specificity are undefined
// (not zero) when their class is absent; a refused verdict counts as
// incorrect in all three rates and is tallied separately.
struct MetricSet {
  double accuracy = 0.0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  double acp = 0.0;
  std::size_t refusals = 0;
  std::size_t subjects = 0;
};

inline MetricSet compute_metrics(const std::vector<SubjectDiagnosis>& diagnoses) {
  if (diagnoses.empty()) throw DataError("compute_metrics: no diagnoses");
  MetricSet m;
  m.subjects = diagnoses.size();
  std::size_t correct = 0, amci_total = 0, amci_correct = 0, hc_total = 0, hc_correct = 0;
  std::vector<double> confidences;
  confidences.reserve(diagnoses.size());
  for (const SubjectDiagnosis& d : diagnoses) {
    if (d.true_group != 0 && d.true_group != 1) {
      throw DataError("compute_metrics: group label must be 0 or 1");
    }
    bool is_amci = d.true_group == kGroupAmci;
    bool hit = (is_amci && d.verdict == Verdict::kAmci) ||
               (!is_amci && d.verdict == Verdict::kHealthy);
    correct += static_cast<std::size_t>(hit);
    if (is_amci) {
      amci_total += 1;
      amci_correct += static_cast<std::size_t>(hit);
    } else {
      hc_total += 1;
      hc_correct += static_cast<std::size_t>(hit);
    }
    m.refusals += static_cast<std::size_t>(d.verdict == Verdict::kRefused);
    confidences.push_back(d.confidence);
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(diagnoses.size());
  if (amci_total > 0) {
    m.sensitivity = static_cast<double>(amci_correct) / static_cast<double>(amci_total);
  }
  if (hc_total > 0) {
    m.specificity = static_cast<double>(hc_correct) / static_cast<double>(hc_total);
  }
  m.acp = average_confidence(confidences);
  return m;
}

// One cross-validation fold: the held-out subject, its per-sample
// posteriors and predictions, the verdict, and the training log.
struct FoldResult {
  int subject_id = 0;
  SubjectDiagnosis diagnosis;
  std::vector<int> epoch_indices;
  std::vector<int> predictions;
  Tensor probabilities;  // (samples, 2)
  LossReport training_log;
  CspFilterBank bank;  // fitted on this fold's training subjects only
};

struct ExperimentResult {
  std::vector<FoldResult> folds;  // ascending held-out subject id
  MetricSet metrics;
};

// Everything a cross-validation run needs beyond the dataset itself.
struct CrossvalOptions {
  BandGrid grid;
  FeatureSettings features;
  ArchConfig arch;  // geometry fields are overridden from grid and features
  TrainConfig training;
  bool gfe_enabled = true;
  bool dbda_enabled = true;
  std::size_t jobs = 1;

  // Invoked once per completed fold, serialized across worker threads, so
  // callers can persist fold artifacts as they finish.
  std::function<void(const FoldResult&)> on_fold;
};

inline constexpr std::uint64_t kStreamFold = 0x666f6cULL;

namespace detail {

inline Tensor stack_feature_batch(const ArchConfig& arch,
                                  const std::vector<const FeatureSample*>& samples) {
  Tensor x({samples.size(), arch.in_channels, arch.freq_bins, arch.time_bins});
  std::size_t per = arch.in_channels * arch.freq_bins * arch.time_bins;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor& v = samples[i]->values;
    if (v.size() != per) {
      throw DimensionError("stack_feature_batch: sample shape " + v.shape_string() +
                           " does not match the configured geometry");
    }
    std::copy(v.data.begin(), v.data.end(),
              x.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return x;
}

// Runs work(i) for i in [0, count) over `jobs` threads; the caller's
// output slots make the aggregation order-independent.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& work) {
  if (jobs == 0) throw ConfigError("parallel_for: jobs must be >= 1");
  std::size_t threads = std::min(jobs, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto body = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error) return;
      }
      try {
        work(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

// Leave-one-subject-out cross-validation.  Per fold: the spatial
// filter bank is fitted on the training subjects only, the held-out
// subject's shifted epochs form the unlabeled target domain, the model
// trains under the phased schedule with a fold seed derived from the
// master seed and the subject id, and the subject's verdict is the
// majority vote over its sample predictions.
inline ExperimentResult loso_cross_validate(const EpochSet& data, const CrossvalOptions& options) {
  if (options.jobs == 0) throw ConfigError("loso_cross_validate: jobs must be >= 1");
  options.grid.validate();
  options.features.validate(data.sample_rate);
  options.training.validate();

  std::vector<int> subjects = data.subject_ids();
  std::size_t amci_subjects = 0, hc_subjects = 0;
  for (int s : subjects) {
    (data.group_of(s) == kGroupAmci ? amci_subjects : hc_subjects) += 1;
  }
  if (amci_subjects < 2 || hc_subjects < 2) {
    throw DataError("loso_cross_validate: need >= 2 subjects per class, got " +
                    std::to_string(amci_subjects) + " aMCI and " + std::to_string(hc_subjects) +
                    " HC");
  }
  for (const Epoch& e : data.epochs) {
    if (e.domain != kDomainSource) {
      throw DataError("loso_cross_validate: dataset already carries target-domain epochs");
    }
  }

  ArchConfig arch = options.arch;
  arch.in_channels = options.features.n_components;
  arch.freq_bins = options.grid.frequency_bands.size();
  arch.time_bins = options.grid.time_bands.size();

  // Band-limited second moments of every unshifted epoch, computed
  // once: per-fold filter fits and training features are quadratic
  // forms in these.
  std::vector<EpochCellMoments> moments;
  moments.reserve(data.epochs.size());
  for (const Epoch& e : data.epochs) {
    moments.push_back(compute_cell_moments(e, options.grid, options.features));
  }

  std::size_t k = arch.freq_bins, t = arch.time_bins;
  std::vector<FoldResult> folds(subjects.size());
  std::mutex fold_sink_mutex;
  detail::parallel_for(subjects.size(), options.jobs, [&](std::size_t fold_index) {
    int held_out = subjects[fold_index];

    std::vector<const EpochCellMoments*> train_moments;
    train_moments.reserve(moments.size());
    for (const EpochCellMoments& m : moments) {
      if (m.subject_id != held_out) train_moments.push_back(&m);
    }
    CspFilterBank bank = fit_csp_bank(train_moments, options.grid, options.features);

    std::vector<FeatureSample> train_features;
    train_features.reserve(train_moments.size());
    for (const EpochCellMoments* m : train_moments) {
      FeatureSample s = power_features(*m, bank, options.features.log_power);
      s.values = detail::reshape_cells(s.values, k, t);
      train_features.push_back(std::move(s));
    }

    EpochSet target = split_domains(data, held_out).second;
    std::vector<FeatureSample> target_features;
    target_features.reserve(target.epochs.size());
    for (const Epoch& e : target.epochs) {
      EpochCellMoments m = compute_cell_moments(e, options.grid, options.features);
      FeatureSample s = power_features(m, bank, options.features.log_power);
      s.values = detail::reshape_cells(s.values, k, t);
      target_features.push_back(std::move(s));
    }

    std::vector<const FeatureSample*> source_ptrs, target_ptrs;
    for (const FeatureSample& s : train_features) source_ptrs.push_back(&s);
    for (const FeatureSample& s : target_features) target_ptrs.push_back(&s);

    TrainConfig fold_cfg = options.training;
    fold_cfg.seed = derive_seed(options.training.seed,
                                {kStreamFold, static_cast<std::uint64_t>(held_out)});

    FoldResult fold;
    fold.subject_id = held_out;
    fold.bank = bank;
    GfdannModel model = train_model(arch, options.gfe_enabled, options.dbda_enabled, fold_cfg,
                                    source_ptrs, target_ptrs, &fold.training_log);

    Tensor batch = detail::stack_feature_batch(arch, target_ptrs);
    fold.probabilities = classify(model, batch);
    fold.predictions.reserve(target_features.size());
    fold.epoch_indices.reserve(target_features.size());
    for (std::size_t i = 0; i < target_features.size(); ++i) {
      fold.predictions.push_back(fold.probabilities(i, 1) > fold.probabilities(i, 0) ? 1 : 0);
      fold.epoch_indices.push_back(target_features[i].epoch_index);
    }

    int true_group = data.group_of(held_out);
    fold.diagnosis.subject_id = held_out;
    fold.diagnosis.true_group = true_group;
    fold.diagnosis.verdict = vote_subject(fold.predictions);
    fold.diagnosis.confidence = confidence_probability(fold.predictions, true_group);
    fold.diagnosis.sample_count = fold.predictions.size();
    folds[fold_index] = std::move(fold);
    if (options.on_fold) {
      std::lock_guard<std::mutex> lock(fold_sink_mutex);
      options.on_fold(folds[fold_index]);
    }
  });

  ExperimentResult result;
  result.folds = std::move(folds);
  std::vector<SubjectDiagnosis> diagnoses;
  diagnoses.reserve(result.folds.size());
  for (const FoldResult& f : result.folds) diagnoses.push_back(f.diagnosis);
  result.metrics = compute_metrics(diagnoses);
  return result;
}

// The four-variant ablation grid in its fixed reporting order.
struct AblationVariant {
  const char* name;
  bool gfe;
  bool dbda;
};

inline const std::array<AblationVariant, 4>& ablation_variants() {
  static const std::array<AblationVariant, 4> kVariants{{{"basenet1", false, false},
                                                         {"basenet2", true, false},
                                                         {"basenet3", false, true},
                                                         {"gfdann", true, true}}};
  return kVariants;
}

struct AblationRow {
  std::string variant;
  bool gfe = false;
  bool dbda = false;
  ExperimentResult result;
};

// Runs the full cross-validation once per variant with identical data
// and seeds, so the variants share fold seeds and trunk
// initializations.
inline std::vector<AblationRow> run_ablation(const EpochSet& data, CrossvalOptions options) {
  std::vector<AblationRow> rows;
  rows.reserve(ablation_variants().size());
  for (const AblationVariant& v : ablation_variants()) {
    options.gfe_enabled = v.gfe;
    options.dbda_enabled = v.dbda;
    AblationRow row;
    row.variant = v.name;
    row.gfe = v.gfe;
    row.dbda = v.dbda;
    row.result = loso_cross_validate(data, options);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Two-dimensional principal-component projection of row vectors.
struct PcaProjection {
  Tensor scores;      // (rows, 2)
  Tensor components;  // (2, dim); rows are unit-norm principal axes
  std::array<double, 2> variances{0.0, 0.0};
};

inline PcaProjection pca_project_2d(const Tensor& rows) {
  require_rank(rows, 2, "pca_project_2d");
  std::size_t n = rows.dim(0), d = rows.dim(1);
  if (n < 3) {
    throw DataError("pca_project_2d: need at least 3 rows, got " + std::to_string(n));
  }
  if (d < 2) {
    throw DimensionError("pca_project_2d: need at least 2 feature dimensions");
  }

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows(i, j);
  }
  for (double& m : mean) m /= static_cast<double>(n);

  Tensor centered({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered(i, j) = rows(i, j) - mean[j];
  }

  Tensor cov({d, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &centered.data[i * d];
    for (std::size_t a = 0; a < d; ++a) {
      double ra = row[a];
      double* crow = &cov.data[a * d];
      for (std::size_t b = a; b < d; ++b) crow[b] += ra * row[b];
    }
  }
  double denom = static_cast<double>(n - 1);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= denom;
      cov(b, a) = cov(a, b);
    }
  }

  SymEig eig = jacobi_eigendecomposition(cov);
  PcaProjection out;
  out.components = Tensor({2, d});
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t j = 0; j < d; ++j) out.components(c, j) = eig.vectors(j, c);
    detail::fix_sign(&out.components.data[c * d], d);
    out.variances[c] = eig.values[c];
  }
  out.scores = Tensor({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += centered(i, j) * out.components(c, j);
      out.scores(i, c) = acc;
    }
  }
  return out;
}

// Branch-tagged 2D projection of one class's feature samples: both
// extractor outputs are stacked into a single point set and projected
// onto its shared top-2 principal axes.
struct ProjectionRow {
  int sample_id = 0;
  int branch = 0;
  double pc1 = 0.0;
  double pc2 = 0.0;
};

inline std::vector<ProjectionRow> project_branch_features(
    GfdannModel& model, const std::vector<const FeatureSample*>& samples) {
  if (samples.size() < 3) {
    throw DataError("project_branch_features: need at least 3 samples, got " +
                    std::to_string(samples.size()));
  }
  Tensor batch = detail::stack_feature_batch(model.arch, samples);
  Tensor f1 = extract_features(model, batch, 1);
  Tensor f2 = extract_features(model, batch, 2);
  std::size_t n = samples.size(), d = model.arch.feature_length();
  Tensor stacked({2 * n, d});
  std::copy(f1.data.begin(), f1.data.end(), stacked.data.begin());
  std::copy(f2.data.begin(), f2.data.end(),
            stacked.data.begin() + static_cast<std::ptrdiff_t>(n * d));

  PcaProjection p = pca_project_2d(stacked);
  std::vector<ProjectionRow> rows;
  rows.reserve(2 * n);
  for (int branch = 1; branch <= 2; ++branch) {
    std::size_t base = branch == 1 ? 0 : n;
    for (std::size_t i = 0; i < n; ++i) {
      rows.push_back({static_cast<int>(i), branch, p.scores(base + i, 0),
                      p.scores(base + i, 1)});
    }
  }
  return rows;
}

inline void write_projection_csv(const std::vector<ProjectionRow>& rows,
                                 const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("write_projection_csv: cannot open " + file.string());
  out << "sample_id,branch,pc1,pc2\n";
  out.precision(17);
  for (const ProjectionRow& r : rows) {
    out << r.sample_id << ',' << r.branch << ',' << r.pc1 << ',' << r.pc2 << '\n';
  }
  if (!out) throw DataError("write_projection_csv: short write to " + file.string());
}

}  // namespace gfdann
