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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gfdann/autodiff.hpp"
#include "gfdann/epochs.hpp"
#include "gfdann/errors.hpp"
#include "gfdann/model.hpp"
#include "gfdann/rng.hpp"
#include "gfdann/shallow_features.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

// Optimization schedule and loss settings.
struct TrainConfig {
  std::size_t n_d = 20;  // adversarial epochs
  std::size_t n_c = 20;  // classifier epochs
  double lr_d1 = 1e-3;
  double lr_d2 = 1e-3;
  double lr_d3 = 1e-3;
  double lr_c = 1e-3;
  double lr_decay = 0.95;  // per-epoch multiplier, phase-local exponent
  std::size_t batch_size = 64;
  double focal_gamma = 2.0;
  double focal_alpha = 1.0;
  std::uint64_t seed = 0;
  bool interleaved = false;  // alternate the two phases per epoch

  void validate() const {
    if (!(lr_d1 > 0.0) || !(lr_d2 > 0.0) || !(lr_d3 > 0.0) || !(lr_c > 0.0)) {
      throw ConfigError("TrainConfig: learning rates must be > 0");
    }
    if (!(lr_decay > 0.0) || !(lr_decay <= 1.0)) {
      throw ConfigError("TrainConfig: lr_decay must lie in (0, 1]");
    }
    if (batch_size < 2) {
      throw ConfigError("TrainConfig: batch_size must be >= 2 (batch norm needs it)");
    }
    if (!(focal_gamma >= 0.0) || !(focal_alpha > 0.0)) {
      throw ConfigError("TrainConfig: focal_gamma must be >= 0 and focal_alpha > 0");
    }
  }
};

// Focal loss over explicit probabilities, outside any graph: the mean
// of -alpha * (1 - p_t)^gamma * ln(p_t) over the batch.
struct FocalResult {
  double loss = 0.0;
  bool floored = false;  // some true-class probability hit the numeric floor
};

inline FocalResult focal_loss(const Tensor& probs, const std::vector<int>& targets, double gamma,
                              double alpha) {
  require_rank(probs, 2, "focal_loss probabilities");
  std::size_t n = probs.dim(0), c = probs.dim(1);
  if (targets.size() != n) {
    throw DimensionError("focal_loss: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(n));
  }
  FocalResult out;
  for (std::size_t i = 0; i < n; ++i) {
    int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw DimensionError("focal_loss: target class out of range");
    }
    out.loss += focal_term(probs(i, static_cast<std::size_t>(t)), gamma, alpha, &out.floored);
  }
  out.loss /= static_cast<double>(n);
  return out;
}

// The composite objective: classification loss minus the three
// discriminator losses.  Ablated discriminators contribute 0.
inline double total_loss(double l_c, double l_d1, double l_d2, double l_d3) {
  return l_c - l_d1 - l_d2 - l_d3;
}

inline constexpr const char* kPhaseAdversarial = "adversarial";
inline constexpr const char* kPhaseClassifier = "classifier";

// One training-log row; l_total always composes the other four columns.
struct LossRow {
  std::size_t epoch = 0;
  std::string phase;
  double l_c = 0.0;
  double l_d1 = 0.0;
  double l_d2 = 0.0;
  double l_d3 = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
};

struct LossReport {
  std::vector<LossRow> rows;
};

inline void write_training_log_csv(const LossReport& report, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("write_training_log_csv: cannot open " + file.string());
  out << "epoch,phase,L_c,L_d1,L_d2,L_d3,L_total,lr\n";
  out.precision(17);
  for (const LossRow& r : report.rows) {
    out << r.epoch << ',' << r.phase << ',' << r.l_c << ',' << r.l_d1 << ',' << r.l_d2 << ','
        << r.l_d3 << ',' << r.l_total << ',' << r.lr << '\n';
  }
  if (!out) throw DataError("write_training_log_csv: short write to " + file.string());
}

// Adam over a fixed parameter family.  Each adversarial sub-update and
// the classifier phase owns its own optimizer, so shared tensors (the
// extractors) carry independent moment estimates per objective.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const Graph& g, const std::vector<ParamBinding>& bindings, double lr) {
    t_ += 1;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const ParamBinding& b : bindings) {
      Slot& slot = slots_[b.storage];
      if (slot.m.size() == 0) {
        slot.m = Tensor(b.storage->shape, 0.0);
        slot.v = Tensor(b.storage->shape, 0.0);
      }
      const Tensor& grad = g.grad(b.node);
      if (grad.shape != b.storage->shape) {
        throw DimensionError("AdamOptimizer: gradient shape mismatch");
      }
      for (std::size_t i = 0; i < grad.size(); ++i) {
        double gi = grad[i];
        slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * gi;
        slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * gi * gi;
        double mh = slot.m[i] / bc1;
        double vh = slot.v[i] / bc2;
        (*b.storage)[i] -= lr * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

 private:
  struct Slot {
    Tensor m, v;
  };
  std::unordered_map<Tensor*, Slot> slots_;
  std::uint64_t t_ = 0;
  double beta1_, beta2_, eps_;
};

// Seed stream tags for batch shuffling and model initialization.
inline constexpr std::uint64_t kStreamModelInit = 0x696e69ULL;
inline constexpr std::uint64_t kStreamBatchAmci = 0x624131ULL;
inline constexpr std::uint64_t kStreamBatchHc = 0x624832ULL;
inline constexpr std::uint64_t kStreamBatchDomain = 0x624433ULL;
inline constexpr std::uint64_t kStreamBatchClassifier = 0x626343ULL;

namespace detail {

// Shuffled batch index lists: contiguous chunks of a shuffled
// permutation; a trailing singleton is merged into the previous chunk
// because batch norm cannot train on one sample.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t count,
                                                          std::size_t batch_size, Rng& rng) {
  if (count < 2) {
    throw DataError("make_batches: need at least 2 samples per training stream, got " +
                    std::to_string(count));
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t lo = 0; lo < count; lo += batch_size) {
    std::size_t hi = std::min(count, lo + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace detail

// Phased minimax trainer.  Owns the optimizer states and the batch
// routing: group-1 source samples feed the first individual
// discriminator, group-2 the second, and all source plus target samples
// feed the domain discriminator; target samples never reach the
// individual or classifier paths.
class Trainer {
 public:
  Trainer(GfdannModel* model, TrainConfig config, std::vector<const FeatureSample*> source,
          std::vector<const FeatureSample*> target)
      : model_(model),
        cfg_(std::move(config)),
        source_(std::move(source)),
        target_(std::move(target)) {
    cfg_.validate();
    if (source_.empty()) throw DataError("Trainer: empty source split");
    if (model_->dbda_enabled && target_.empty()) {
      throw DataError("Trainer: domain adaptation requires a non-empty target split");
    }

    std::map<int, int> amci_subjects, hc_subjects;
    for (const FeatureSample* s : source_) {
      if (s->domain != kDomainSource) {
        throw DataError("Trainer: sample of subject " + std::to_string(s->subject_id) +
                        " in the source split carries a non-source domain label");
      }
      if (s->group == kGroupAmci) {
        amci_subjects.emplace(s->subject_id, 0);
        amci_.push_back(s);
      } else if (s->group == kGroupHealthy) {
        hc_subjects.emplace(s->subject_id, 0);
        hc_.push_back(s);
      } else {
        throw DataError("Trainer: unknown group label " + std::to_string(s->group));
      }
    }
    for (const FeatureSample* s : target_) {
      if (s->domain != kDomainTarget) {
        throw DataError("Trainer: sample of subject " + std::to_string(s->subject_id) +
                        " in the target split carries a non-target domain label");
      }
    }

    int next = 0;
    for (auto& [sid, idx] : amci_subjects) idx = next++;
    next = 0;
    for (auto& [sid, idx] : hc_subjects) idx = next++;
    amci_index_ = std::move(amci_subjects);
    hc_index_ = std::move(hc_subjects);

    if (model_->gfe_enabled) {
      if (amci_index_.size() != model_->arch.amci_individuals ||
          hc_index_.size() != model_->arch.hc_individuals) {
        throw DataError("Trainer: individual-discriminator widths (" +
                        std::to_string(model_->arch.amci_individuals) + ", " +
                        std::to_string(model_->arch.hc_individuals) + ") do not match the " +
                        std::to_string(amci_index_.size()) + "+" +
                        std::to_string(hc_index_.size()) + " training subjects");
      }
    }

    domain_stream_ = source_;
    domain_stream_.insert(domain_stream_.end(), target_.begin(), target_.end());
  }

  const TrainConfig& config() const { return cfg_; }

  // One adversarial sub-update: batch through one extractor, a reversal
  // point and one discriminator head; Adam descends the discriminator
  // while the reversed gradient makes the extractor ascend.
  double discriminator_substep(int which, const std::vector<const FeatureSample*>& stream,
                               const std::vector<std::size_t>& batch, double lr) {
    Graph g;
    std::vector<ParamBinding> bindings;
    Tensor x = stack_batch(stream, batch);
    int xin = g.constant(std::move(x));
    int probs = -1;
    std::vector<int> labels;
    labels.reserve(batch.size());
    if (which == 1 || which == 2) {
      ExtractorParams& ext = which == 1 ? model_->f1 : model_->f2;
      MlpParams& head = which == 1 ? *model_->d1 : *model_->d2;
      const std::map<int, int>& index = which == 1 ? amci_index_ : hc_index_;
      double lambda = which == 1 ? model_->arch.lambda_individual_1
                                 : model_->arch.lambda_individual_2;
      int expected_group = which == 1 ? kGroupAmci : kGroupHealthy;
      for (std::size_t i : batch) {
        const FeatureSample* s = stream[i];
        if (s->group != expected_group) {
          throw DataError("Trainer: sample routed to the wrong individual-discriminator branch");
        }
        labels.push_back(index.at(s->subject_id));
      }
      int f = build_extractor_graph(g, model_->arch, ext, xin, true, &bindings);
      probs = build_mlp_graph(g, head, g.grad_reverse(f, lambda), &bindings);
    } else {
      for (std::size_t i : batch) labels.push_back(stream[i]->domain);
      int f1 = build_extractor_graph(g, model_->arch, model_->f1, xin, true, &bindings);
      int f2 = build_extractor_graph(g, model_->arch, model_->f2, xin, true, &bindings);
      int cat = g.concat(f1, f2);
      probs = build_mlp_graph(g, *model_->d3, g.grad_reverse(cat, model_->arch.lambda_domain),
                              &bindings);
    }
    int loss = g.focal_loss(probs, std::move(labels), cfg_.focal_gamma, cfg_.focal_alpha);
    double value = g.value(loss)[0];
    if (!std::isfinite(value)) {
      throw NumericalError("Trainer: non-finite discriminator loss");
    }
    g.backward(loss);
    optimizer_for(which).step(g, bindings, lr);
    return value;
  }

  // One classifier update over a source batch: both extractors and the
  // classifier head descend the focal classification loss.
  double classifier_substep(const std::vector<std::size_t>& batch, double lr) {
    Graph g;
    std::vector<ParamBinding> bindings;
    Tensor x = stack_batch(source_, batch);
    int xin = g.constant(std::move(x));
    std::vector<int> labels;
    labels.reserve(batch.size());
    for (std::size_t i : batch) labels.push_back(source_[i]->group);
    int f1 = build_extractor_graph(g, model_->arch, model_->f1, xin, true, &bindings);
    int f2 = build_extractor_graph(g, model_->arch, model_->f2, xin, true, &bindings);
    int probs = build_classifier_graph(g, model_->classifier, g.concat(f1, f2), &bindings);
    int loss = g.focal_loss(probs, std::move(labels), cfg_.focal_gamma, cfg_.focal_alpha);
    double value = g.value(loss)[0];
    if (!std::isfinite(value)) {
      throw NumericalError("Trainer: non-finite classification loss");
    }
    g.backward(loss);
    adam_c_.step(g, bindings, lr);
    return value;
  }

  // One adversarial epoch: a full pass where each step performs the
  // d1, d2, d3 sub-updates in order.  Streams of different lengths
  // cycle so every stream is consumed at least once per epoch.
  LossRow adversarial_epoch(std::size_t epoch) {
    double decay = std::pow(cfg_.lr_decay, static_cast<double>(epoch));
    LossRow row;
    row.epoch = epoch;
    row.phase = kPhaseAdversarial;
    row.lr = (model_->gfe_enabled ? cfg_.lr_d1 : cfg_.lr_d3) * decay;

    std::vector<std::vector<std::size_t>> b1, b2, b3;
    if (model_->gfe_enabled) {
      Rng r1(derive_seed(cfg_.seed, {kStreamBatchAmci, epoch}));
      Rng r2(derive_seed(cfg_.seed, {kStreamBatchHc, epoch}));
      b1 = detail::make_batches(amci_.size(), cfg_.batch_size, r1);
      b2 = detail::make_batches(hc_.size(), cfg_.batch_size, r2);
    }
    if (model_->dbda_enabled) {
      Rng r3(derive_seed(cfg_.seed, {kStreamBatchDomain, epoch}));
      b3 = detail::make_batches(domain_stream_.size(), cfg_.batch_size, r3);
    }
    std::size_t steps = std::max({b1.size(), b2.size(), b3.size()});
    if (steps == 0) {
      row.l_total = total_loss(row.l_c, row.l_d1, row.l_d2, row.l_d3);
      return row;  // both adversarial branches ablated
    }
    for (std::size_t s = 0; s < steps; ++s) {
      if (!b1.empty()) row.l_d1 += discriminator_substep(1, amci_, b1[s % b1.size()],
                                                         cfg_.lr_d1 * decay);
      if (!b2.empty()) row.l_d2 += discriminator_substep(2, hc_, b2[s % b2.size()],
                                                         cfg_.lr_d2 * decay);
      if (!b3.empty()) row.l_d3 += discriminator_substep(3, domain_stream_, b3[s % b3.size()],
                                                         cfg_.lr_d3 * decay);
    }
    row.l_d1 /= static_cast<double>(steps);
    row.l_d2 /= static_cast<double>(steps);
    row.l_d3 /= static_cast<double>(steps);
    row.l_total = total_loss(row.l_c, row.l_d1, row.l_d2, row.l_d3);
    return row;
  }

  LossRow classifier_epoch(std::size_t epoch) {
    double decay = std::pow(cfg_.lr_decay, static_cast<double>(epoch));
    LossRow row;
    row.epoch = epoch;
    row.phase = kPhaseClassifier;
    row.lr = cfg_.lr_c * decay;

    Rng rc(derive_seed(cfg_.seed, {kStreamBatchClassifier, epoch}));
    auto batches = detail::make_batches(source_.size(), cfg_.batch_size, rc);
    for (const auto& batch : batches) {
      row.l_c += classifier_substep(batch, cfg_.lr_c * decay);
    }
    row.l_c /= static_cast<double>(batches.size());
    row.l_total = total_loss(row.l_c, row.l_d1, row.l_d2, row.l_d3);
    return row;
  }

  // The full schedule: n_d adversarial epochs then n_c classifier
  // epochs, or alternating when interleaved.
  LossReport run() {
    LossReport report;
    if (cfg_.interleaved) {
      std::size_t outer = std::max(cfg_.n_d, cfg_.n_c);
      for (std::size_t e = 0; e < outer; ++e) {
        if (e < cfg_.n_d) report.rows.push_back(adversarial_epoch(e));
        if (e < cfg_.n_c) report.rows.push_back(classifier_epoch(e));
      }
    } else {
      for (std::size_t e = 0; e < cfg_.n_d; ++e) report.rows.push_back(adversarial_epoch(e));
      for (std::size_t e = 0; e < cfg_.n_c; ++e) report.rows.push_back(classifier_epoch(e));
    }
    return report;
  }

 private:
  AdamOptimizer& optimizer_for(int which) {
    switch (which) {
      case 1: return adam_d1_;
      case 2: return adam_d2_;
      case 3: return adam_d3_;
      default: throw ConfigError("Trainer: unknown sub-update");
    }
  }

  Tensor stack_batch(const std::vector<const FeatureSample*>& stream,
                     const std::vector<std::size_t>& batch) const {
    const ArchConfig& a = model_->arch;
    Tensor x({batch.size(), a.in_channels, a.freq_bins, a.time_bins});
    std::size_t per = a.in_channels * a.freq_bins * a.time_bins;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Tensor& v = stream[batch[i]]->values;
      if (v.size() != per) {
        throw DimensionError("Trainer: feature sample shape " + v.shape_string() +
                             " does not match the configured geometry");
      }
      std::copy(v.data.begin(), v.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return x;
  }

  GfdannModel* model_;
  TrainConfig cfg_;
  std::vector<const FeatureSample*> source_;
  std::vector<const FeatureSample*> target_;
  std::vector<const FeatureSample*> amci_;
  std::vector<const FeatureSample*> hc_;
  std::vector<const FeatureSample*> domain_stream_;
  std::map<int, int> amci_index_;
  std::map<int, int> hc_index_;
  AdamOptimizer adam_d1_;
  AdamOptimizer adam_d2_;
  AdamOptimizer adam_d3_;
  AdamOptimizer adam_c_;
};

// Initializes and trains a model under the Algorithm-1 schedule.  The
// discriminator widths are inferred from the training subjects.
inline GfdannModel train_model(ArchConfig arch, bool gfe_enabled, bool dbda_enabled,
                               const TrainConfig& cfg,
                               const std::vector<const FeatureSample*>& source,
                               const std::vector<const FeatureSample*>& target,
                               LossReport* report = nullptr) {
  std::map<int, int> amci_subjects, hc_subjects;
  for (const FeatureSample* s : source) {
    (s->group == kGroupAmci ? amci_subjects : hc_subjects).emplace(s->subject_id, 0);
  }
  arch.amci_individuals = amci_subjects.size();
  arch.hc_individuals = hc_subjects.size();

  GfdannModel model = init_model(arch, gfe_enabled, dbda_enabled,
                                 derive_seed(cfg.seed, {kStreamModelInit}));
  Trainer trainer(&model, cfg, source, target);
  LossReport r = trainer.run();
  if (report != nullptr) *report = std::move(r);
  return model;
}

}  // namespace gfdann
