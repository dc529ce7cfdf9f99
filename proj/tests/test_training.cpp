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

#include "gfdann/training.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gfdann/model.hpp"
#include "gfdann/rng.hpp"

namespace gfdann {
namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.in_channels = 2;
  a.freq_bins = 3;
  a.time_bins = 2;
  a.stage_channels = {3, 4, 4};
  a.out_channels = 2;
  a.disc_hidden = 5;
  a.amci_individuals = 3;
  a.hc_individuals = 2;
  return a;
}

// Toy corpus: three aMCI subjects, two HC subjects, six samples each,
// plus one target subject.  Class structure is a constant offset, which
// survives batch normalization as across-sample variance.
struct ToyData {
  std::vector<FeatureSample> storage;
  std::vector<const FeatureSample*> source;
  std::vector<const FeatureSample*> target;

  explicit ToyData(std::uint64_t seed, double offset = 1.0, std::size_t per_subject = 6) {
    Rng rng(seed);
    auto add = [&](int subject, int group, int domain) {
      for (std::size_t e = 0; e < per_subject; ++e) {
        FeatureSample s;
        s.values = rng.gaussian_tensor({2, 3, 2});
        double shift = group == kGroupAmci ? offset : -offset;
        for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] += shift;
        s.subject_id = subject;
        s.group = group;
        s.domain = domain;
        s.epoch_index = static_cast<int>(e);
        storage.push_back(std::move(s));
      }
    };
    add(0, kGroupAmci, kDomainSource);
    add(1, kGroupAmci, kDomainSource);
    add(2, kGroupAmci, kDomainSource);
    add(10, kGroupHealthy, kDomainSource);
    add(11, kGroupHealthy, kDomainSource);
    add(20, kGroupAmci, kDomainTarget);
    for (const FeatureSample& s : storage) {
      (s.domain == kDomainSource ? source : target).push_back(&s);
    }
  }
};

TrainConfig quick_config(std::uint64_t seed = 5) {
  TrainConfig cfg;
  cfg.n_d = 3;
  cfg.n_c = 3;
  cfg.batch_size = 8;
  cfg.seed = seed;
  return cfg;
}

std::map<std::string, std::vector<double>> snapshot(const GfdannModel& m) {
  std::map<std::string, std::vector<double>> out;
  for_each_named_tensor(m, [&](const std::string& name, const Tensor& t) {
    out.emplace(name, t.data);
  });
  return out;
}

std::vector<double> flat_params(const ExtractorParams& p) {
  std::vector<double> out;
  auto take = [&](const Tensor& t) { out.insert(out.end(), t.data.begin(), t.data.end()); };
  for (const ConvStageParams& st : p.stages) {
    take(st.dw_w);
    take(st.dw_b);
    take(st.pw_w);
    take(st.pw_b);
    take(st.bn.gamma);
    take(st.bn.beta);
  }
  take(p.reduce_w);
  take(p.reduce_b);
  take(p.reduce_bn.gamma);
  take(p.reduce_bn.beta);
  return out;
}

TEST(FocalLoss, GammaZeroMatchesCrossEntropy) {
  Tensor probs({4, 3});
  double rows[4][3] = {{0.7, 0.2, 0.1}, {0.1, 0.6, 0.3}, {0.25, 0.25, 0.5}, {0.9, 0.05, 0.05}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) probs(i, j) = rows[i][j];
  std::vector<int> targets{0, 1, 2, 0};

  FocalResult r = focal_loss(probs, targets, 0.0, 1.0);
  double want = 0.0;
  for (std::size_t i = 0; i < 4; ++i) want -= std::log(rows[i][targets[i]]);
  want /= 4.0;
  EXPECT_NEAR(r.loss, want, 1e-12);
  EXPECT_FALSE(r.floored);

  FocalResult twice = focal_loss(probs, targets, 0.0, 2.0);
  EXPECT_NEAR(twice.loss, 2.0 * want, 1e-12);
}

TEST(FocalLoss, GammaTwoDownWeightsConfidentSamples) {
  Tensor probs({2, 2});
  probs(0, 0) = 0.9;
  probs(0, 1) = 0.1;
  probs(1, 0) = 0.6;
  probs(1, 1) = 0.4;
  std::vector<int> targets{0, 0};
  FocalResult r = focal_loss(probs, targets, 2.0, 1.0);
  double want = (0.01 * -std::log(0.9) + 0.16 * -std::log(0.6)) / 2.0;
  EXPECT_NEAR(r.loss, want, 1e-12);
}

TEST(FocalLoss, ZeroProbabilityHitsTheFloorAndStaysFinite) {
  Tensor probs({1, 2});
  probs(0, 0) = 0.0;
  probs(0, 1) = 1.0;
  std::vector<int> targets{0};
  FocalResult r = focal_loss(probs, targets, 2.0, 1.0);
  EXPECT_TRUE(r.floored);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_THROW(focal_loss(probs, {2}, 2.0, 1.0), DimensionError);
  EXPECT_THROW(focal_loss(probs, {0, 1}, 2.0, 1.0), DimensionError);
}

TEST(TotalLoss, ComposesTheFourTerms) {
  EXPECT_DOUBLE_EQ(total_loss(1.5, 0.25, 0.125, 0.5), 1.5 - 0.25 - 0.125 - 0.5);
  EXPECT_DOUBLE_EQ(total_loss(0.75, 0.0, 0.0, 0.0), 0.75);
}

TEST(TrainConfig, ValidationRejectsDegenerateSettings) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.lr_c = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr_decay = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr_decay = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.focal_gamma = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Trainer, AdversarialPhaseNeverTouchesTheClassifier) {
  ToyData data(3);
  GfdannModel m = init_model(tiny_arch(), true, true, 19);
  Trainer trainer(&m, quick_config(), data.source, data.target);

  std::vector<double> w_before = m.classifier.w.data;
  std::vector<double> b_before = m.classifier.b.data;
  auto d1_before = m.d1->w1.data;
  for (std::size_t e = 0; e < 3; ++e) trainer.adversarial_epoch(e);
  EXPECT_EQ(m.classifier.w.data, w_before);
  EXPECT_EQ(m.classifier.b.data, b_before);
  EXPECT_NE(m.d1->w1.data, d1_before);
}

TEST(Trainer, ClassifierPhaseNeverTouchesTheDiscriminators) {
  ToyData data(3);
  GfdannModel m = init_model(tiny_arch(), true, true, 19);
  Trainer trainer(&m, quick_config(), data.source, data.target);

  auto d1w = m.d1->w1.data, d1b = m.d1->b2.data;
  auto d2w = m.d2->w2.data;
  auto d3w = m.d3->w1.data;
  std::vector<double> w_before = m.classifier.w.data;
  for (std::size_t e = 0; e < 3; ++e) trainer.classifier_epoch(e);
  EXPECT_EQ(m.d1->w1.data, d1w);
  EXPECT_EQ(m.d1->b2.data, d1b);
  EXPECT_EQ(m.d2->w2.data, d2w);
  EXPECT_EQ(m.d3->w1.data, d3w);
  EXPECT_NE(m.classifier.w.data, w_before);
}

// The reversal makes the extractor ascend its discriminator loss: after
// one d1 sub-update every meaningfully-sized coordinate of the branch-1
// extractor moved in the +gradient direction of the discriminator loss.
TEST(Trainer, AdversarialSubUpdateAscendsTheExtractor) {
  ToyData data(7);
  ArchConfig arch = tiny_arch();
  GfdannModel m = init_model(arch, true, true, 23);

  // Analytic gradient of the plain (non-reversed) discriminator loss
  // with respect to the branch-1 extractor parameters.
  std::vector<const FeatureSample*> amci;
  for (const FeatureSample* s : data.source) {
    if (s->group == kGroupAmci) amci.push_back(s);
  }
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < amci.size(); ++i) batch.push_back(i);

  Tensor x({batch.size(), 2, 3, 2});
  std::size_t per = 12;
  std::vector<int> labels;
  std::map<int, int> index{{0, 0}, {1, 1}, {2, 2}};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor& v = amci[i]->values;
    std::copy(v.data.begin(), v.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * per));
    labels.push_back(index.at(amci[i]->subject_id));
  }

  GfdannModel probe = m;  // same initialization, used for the analytic pass
  Graph g;
  std::vector<ParamBinding> bind;
  int f = build_extractor_graph(g, arch, probe.f1, g.constant(x), true, &bind);
  std::vector<ParamBinding> extractor_bind = bind;
  int probs = build_mlp_graph(g, *probe.d1, f, &bind);
  g.backward(g.focal_loss(probs, labels, 2.0, 1.0));

  std::vector<double> before = flat_params(m.f1);
  TrainConfig cfg = quick_config();
  cfg.lr_d1 = 1e-4;
  Trainer trainer(&m, cfg, data.source, data.target);
  trainer.discriminator_substep(1, amci, batch, cfg.lr_d1);
  std::vector<double> after = flat_params(m.f1);

  std::size_t offset = 0, checked = 0;
  for (const ParamBinding& pb : extractor_bind) {
    const Tensor& grad = g.grad(pb.node);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      double delta = after[offset + i] - before[offset + i];
      if (std::abs(grad[i]) > 1e-6) {
        EXPECT_GT(delta * grad[i], 0.0) << "coordinate " << offset + i;
        checked += 1;
      }
      EXPECT_LE(std::abs(delta), cfg.lr_d1 * 1.0001);
    }
    offset += grad.size();
  }
  EXPECT_EQ(offset, after.size());
  EXPECT_GT(checked, 50u);
}

TEST(Trainer, ZeroReversalStrengthFreezesTheExtractor) {
  ToyData data(11);
  ArchConfig arch = tiny_arch();
  arch.lambda_individual_1 = 0.0;
  GfdannModel m = init_model(arch, true, true, 29);
  Trainer trainer(&m, quick_config(), data.source, data.target);

  std::vector<const FeatureSample*> amci;
  for (const FeatureSample* s : data.source) {
    if (s->group == kGroupAmci) amci.push_back(s);
  }
  std::vector<std::size_t> batch{0, 1, 2, 3};
  std::vector<double> before = flat_params(m.f1);
  auto head_before = m.d1->w1.data;
  trainer.discriminator_substep(1, amci, batch, 1e-3);
  EXPECT_EQ(flat_params(m.f1), before);
  EXPECT_NE(m.d1->w1.data, head_before);
}

TEST(Trainer, ClassifierOverfitsASeparableToyProblem) {
  ToyData data(13, 1.5);
  TrainConfig cfg;
  cfg.n_d = 0;
  cfg.n_c = 40;
  cfg.lr_c = 3e-3;
  cfg.batch_size = 8;
  cfg.seed = 17;
  GfdannModel m = init_model(tiny_arch(), false, false, 31);
  Trainer trainer(&m, cfg, data.source, {});
  LossReport report = trainer.run();
  ASSERT_EQ(report.rows.size(), 40u);
  EXPECT_LT(report.rows.back().l_c, 0.05);
  EXPECT_LT(report.rows.back().l_c, report.rows.front().l_c);
}

TEST(Trainer, ReportComposesTheObjectiveRowByRow) {
  ToyData data(17);
  TrainConfig cfg = quick_config();
  GfdannModel m = init_model(tiny_arch(), true, true, 37);
  Trainer trainer(&m, cfg, data.source, data.target);
  LossReport report = trainer.run();
  ASSERT_EQ(report.rows.size(), cfg.n_d + cfg.n_c);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const LossRow& r = report.rows[i];
    EXPECT_DOUBLE_EQ(r.l_total, total_loss(r.l_c, r.l_d1, r.l_d2, r.l_d3));
    if (i < cfg.n_d) {
      EXPECT_EQ(r.phase, kPhaseAdversarial);
      EXPECT_EQ(r.epoch, i);
      EXPECT_DOUBLE_EQ(r.l_c, 0.0);
      EXPECT_GT(r.l_d1, 0.0);
      EXPECT_GT(r.l_d2, 0.0);
      EXPECT_GT(r.l_d3, 0.0);
      EXPECT_DOUBLE_EQ(r.lr, cfg.lr_d1 * std::pow(cfg.lr_decay, static_cast<double>(i)));
    } else {
      std::size_t e = i - cfg.n_d;
      EXPECT_EQ(r.phase, kPhaseClassifier);
      EXPECT_EQ(r.epoch, e);
      EXPECT_GT(r.l_c, 0.0);
      EXPECT_DOUBLE_EQ(r.l_d1, 0.0);
      EXPECT_DOUBLE_EQ(r.lr, cfg.lr_c * std::pow(cfg.lr_decay, static_cast<double>(e)));
    }
  }
}

TEST(Trainer, InterleavedScheduleAlternatesPhases) {
  ToyData data(19);
  TrainConfig cfg = quick_config();
  cfg.interleaved = true;
  GfdannModel m = init_model(tiny_arch(), true, true, 41);
  Trainer trainer(&m, cfg, data.source, data.target);
  LossReport report = trainer.run();
  ASSERT_EQ(report.rows.size(), cfg.n_d + cfg.n_c);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(report.rows[2 * e].phase, kPhaseAdversarial);
    EXPECT_EQ(report.rows[2 * e + 1].phase, kPhaseClassifier);
    EXPECT_EQ(report.rows[2 * e].epoch, e);
    EXPECT_EQ(report.rows[2 * e + 1].epoch, e);
  }
}

TEST(Trainer, TrainingIsSeedDeterministic) {
  ToyData data(23);
  TrainConfig cfg = quick_config(77);
  LossReport r1, r2, r3;
  GfdannModel a = train_model(tiny_arch(), true, true, cfg, data.source, data.target, &r1);
  GfdannModel b = train_model(tiny_arch(), true, true, cfg, data.source, data.target, &r2);
  EXPECT_EQ(snapshot(a), snapshot(b));
  ASSERT_EQ(r1.rows.size(), r2.rows.size());
  for (std::size_t i = 0; i < r1.rows.size(); ++i) {
    EXPECT_DOUBLE_EQ(r1.rows[i].l_total, r2.rows[i].l_total);
    EXPECT_DOUBLE_EQ(r1.rows[i].l_c, r2.rows[i].l_c);
    EXPECT_DOUBLE_EQ(r1.rows[i].l_d3, r2.rows[i].l_d3);
  }

  TrainConfig other = cfg;
  other.seed = 78;
  GfdannModel c = train_model(tiny_arch(), true, true, other, data.source, data.target, &r3);
  EXPECT_NE(snapshot(a), snapshot(c));
}

// With domain adaptation disabled the target split is never read: even
// NaN-poisoned target samples must leave training finite.
TEST(Trainer, TargetSamplesAreOnlyReadByTheDomainPath) {
  ToyData data(29);
  std::vector<FeatureSample> poisoned;
  for (const FeatureSample* s : data.target) {
    FeatureSample p = *s;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      p.values[i] = std::numeric_limits<double>::quiet_NaN();
    }
    poisoned.push_back(std::move(p));
  }
  std::vector<const FeatureSample*> poisoned_ptrs;
  for (const FeatureSample& p : poisoned) poisoned_ptrs.push_back(&p);

  LossReport report;
  GfdannModel m = train_model(tiny_arch(), true, false, quick_config(), data.source,
                              poisoned_ptrs, &report);
  for (const LossRow& r : report.rows) {
    EXPECT_TRUE(std::isfinite(r.l_total));
    EXPECT_DOUBLE_EQ(r.l_d3, 0.0);
  }
  Tensor probs = classify(m, Tensor({2, 2, 3, 2}, 0.1));
  EXPECT_TRUE(std::isfinite(probs[0]));
}

TEST(Trainer, AblatedVariantsSkipTheirDiscriminatorLosses) {
  ToyData data(31);
  LossReport plain, gfe_only, dbda_only;
  train_model(tiny_arch(), false, false, quick_config(), data.source, data.target, &plain);
  train_model(tiny_arch(), true, false, quick_config(), data.source, data.target, &gfe_only);
  train_model(tiny_arch(), false, true, quick_config(), data.source, data.target, &dbda_only);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(plain.rows[i].l_d1, 0.0);
    EXPECT_DOUBLE_EQ(plain.rows[i].l_d2, 0.0);
    EXPECT_DOUBLE_EQ(plain.rows[i].l_d3, 0.0);
    EXPECT_GT(gfe_only.rows[i].l_d1, 0.0);
    EXPECT_DOUBLE_EQ(gfe_only.rows[i].l_d3, 0.0);
    EXPECT_DOUBLE_EQ(dbda_only.rows[i].l_d1, 0.0);
    EXPECT_GT(dbda_only.rows[i].l_d3, 0.0);
  }
}

TEST(Trainer, RoutingAndSplitErrorsAreRejected) {
  ToyData data(37);
  GfdannModel m = init_model(tiny_arch(), true, true, 43);

  EXPECT_THROW(Trainer(&m, quick_config(), {}, data.target), DataError);
  EXPECT_THROW(Trainer(&m, quick_config(), data.source, {}), DataError);

  // A target-labeled sample hiding in the source split.
  std::vector<const FeatureSample*> mixed = data.source;
  mixed.push_back(data.target.front());
  EXPECT_THROW(Trainer(&m, quick_config(), mixed, data.target), DataError);

  // A source-labeled sample hiding in the target split.
  std::vector<const FeatureSample*> bad_target = data.target;
  bad_target.push_back(data.source.front());
  EXPECT_THROW(Trainer(&m, quick_config(), data.source, bad_target), DataError);

  // Unknown group label.
  FeatureSample odd = *data.source.front();
  odd.group = 7;
  std::vector<const FeatureSample*> with_odd = data.source;
  with_odd.push_back(&odd);
  EXPECT_THROW(Trainer(&m, quick_config(), with_odd, data.target), DataError);

  // Individual-discriminator width mismatch: the model expects three
  // aMCI subjects but the data carries an extra one.
  FeatureSample extra = *data.source.front();
  extra.subject_id = 99;
  std::vector<const FeatureSample*> wide = data.source;
  wide.push_back(&extra);
  EXPECT_THROW(Trainer(&m, quick_config(), wide, data.target), DataError);

  TrainConfig bad_cfg = quick_config();
  bad_cfg.batch_size = 1;
  EXPECT_THROW(Trainer(&m, bad_cfg, data.source, data.target), ConfigError);
}

// The classifier weight sits past the last rectifier, which would
// otherwise flush a poisoned activation to zero.
TEST(Trainer, NonFiniteLossesRaiseNumericalErrors) {
  ToyData data(41);
  GfdannModel m = init_model(tiny_arch(), true, true, 47);
  m.classifier.w[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer trainer(&m, quick_config(), data.source, data.target);
  EXPECT_THROW(trainer.classifier_epoch(0), NumericalError);
}

TEST(Trainer, TrainingLogRoundTripsThroughCsv) {
  ToyData data(43);
  LossReport report;
  train_model(tiny_arch(), true, true, quick_config(), data.source, data.target, &report);

  auto file = std::filesystem::temp_directory_path() /
              ("gfdann_training_log_" + std::to_string(::getpid()) + ".csv");
  write_training_log_csv(report, file);
  std::ifstream in(file);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,phase,L_c,L_d1,L_d2,L_d3,L_total,lr");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines += 1;
  }
  EXPECT_EQ(lines, report.rows.size());
  std::filesystem::remove(file);
}

}  // namespace
}  // namespace gfdann
