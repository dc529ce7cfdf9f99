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

#include "gfdann/model.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gfdann/rng.hpp"

namespace gfdann {
namespace {

ArchConfig small_arch() {
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

Tensor small_batch(std::uint64_t seed, std::size_t n = 4) {
  Rng rng(seed);
  return rng.gaussian_tensor({n, 2, 3, 2});
}

std::map<std::string, std::vector<double>> snapshot(const GfdannModel& m) {
  std::map<std::string, std::vector<double>> out;
  for_each_named_tensor(m, [&](const std::string& name, const Tensor& t) {
    out.emplace(name, t.data);
  });
  return out;
}

void expect_probability_rows(const Tensor& p) {
  ASSERT_EQ(p.rank(), 2u);
  for (std::size_t i = 0; i < p.dim(0); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p.dim(1); ++j) {
      EXPECT_GE(p(i, j), 0.0);
      sum += p(i, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("gfdann_model_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool replace_first(std::string* text, const std::string& from, const std::string& to) {
  auto pos = text->find(from);
  if (pos == std::string::npos) return false;
  text->replace(pos, from.size(), to);
  return true;
}

TEST(Model, DefaultGeometryMatchesTheDualBranchDesign) {
  ArchConfig a;
  EXPECT_EQ(a.feature_length(), 260u);
  GfdannModel m = init_model(a, true, true, 1);
  EXPECT_EQ(m.classifier.w.shape, (std::vector<std::size_t>{2, 520}));
  ASSERT_TRUE(m.d1 && m.d2 && m.d3);
  EXPECT_EQ(m.d1->w1.shape, (std::vector<std::size_t>{64, 260}));
  EXPECT_EQ(m.d1->w2.shape, (std::vector<std::size_t>{10, 64}));
  EXPECT_EQ(m.d2->w2.shape, (std::vector<std::size_t>{9, 64}));
  EXPECT_EQ(m.d3->w1.shape, (std::vector<std::size_t>{64, 520}));
  EXPECT_EQ(m.d3->w2.shape, (std::vector<std::size_t>{2, 64}));
}

TEST(Model, InferenceShapes) {
  GfdannModel m = init_model(small_arch(), true, true, 3);
  Tensor x = small_batch(17);
  Tensor f1 = extract_features(m, x, 1);
  Tensor f2 = extract_features(m, x, 2);
  EXPECT_EQ(f1.shape, (std::vector<std::size_t>{4, 12}));
  EXPECT_EQ(f2.shape, (std::vector<std::size_t>{4, 12}));
  EXPECT_EQ(classify(m, x).shape, (std::vector<std::size_t>{4, 2}));
  EXPECT_EQ(discriminate_individual(m, x, 1).shape, (std::vector<std::size_t>{4, 3}));
  EXPECT_EQ(discriminate_individual(m, x, 2).shape, (std::vector<std::size_t>{4, 2}));
  EXPECT_EQ(discriminate_domain(m, x).shape, (std::vector<std::size_t>{4, 2}));
}

TEST(Model, OutputsAreProbabilityRows) {
  GfdannModel m = init_model(small_arch(), true, true, 5);
  Tensor x = small_batch(23);
  expect_probability_rows(classify(m, x));
  expect_probability_rows(discriminate_individual(m, x, 1));
  expect_probability_rows(discriminate_individual(m, x, 2));
  expect_probability_rows(discriminate_domain(m, x));
}

TEST(Model, InferenceIsDeterministicAndLeavesTheModelUntouched) {
  GfdannModel m = init_model(small_arch(), true, true, 7);
  Tensor x = small_batch(29);
  auto before = snapshot(m);
  Tensor p1 = classify(m, x);
  Tensor q1 = discriminate_domain(m, x);
  Tensor p2 = classify(m, x);
  Tensor q2 = discriminate_domain(m, x);
  EXPECT_EQ(p1.data, p2.data);
  EXPECT_EQ(q1.data, q2.data);
  EXPECT_EQ(snapshot(m), before);
}

TEST(Model, BranchesAreIndependentlyInitialized) {
  GfdannModel m = init_model(small_arch(), true, true, 9);
  Tensor x = small_batch(31);
  EXPECT_GT(max_abs_diff(extract_features(m, x, 1), extract_features(m, x, 2)), 1e-6);
}

TEST(Model, SwappingBranchesChangesTheClassifierInput) {
  GfdannModel m = init_model(small_arch(), true, true, 11);
  Tensor x = small_batch(37);
  Tensor before = classify(m, x);
  std::swap(m.f1, m.f2);
  Tensor after = classify(m, x);
  EXPECT_GT(max_abs_diff(before, after), 1e-9);
}

TEST(Model, ZeroClassifierWeightsGiveTheUniformPosterior) {
  GfdannModel m = init_model(small_arch(), true, true, 13);
  m.classifier.w = Tensor(m.classifier.w.shape, 0.0);
  m.classifier.b = Tensor(m.classifier.b.shape, 0.0);
  Tensor p = classify(m, small_batch(41));
  for (std::size_t i = 0; i < p.dim(0); ++i) {
    EXPECT_DOUBLE_EQ(p(i, 0), 0.5);
    EXPECT_DOUBLE_EQ(p(i, 1), 0.5);
  }
}

TEST(Model, DisabledDiscriminatorsAreNeverConstructed) {
  GfdannModel plain = init_model(small_arch(), false, false, 15);
  EXPECT_FALSE(plain.d1.has_value());
  EXPECT_FALSE(plain.d2.has_value());
  EXPECT_FALSE(plain.d3.has_value());
  Tensor x = small_batch(43);
  EXPECT_THROW(discriminate_individual(plain, x, 1), ConfigError);
  EXPECT_THROW(discriminate_domain(plain, x), ConfigError);

  GfdannModel domain_only = init_model(small_arch(), false, true, 15);
  EXPECT_FALSE(domain_only.d1.has_value());
  EXPECT_TRUE(domain_only.d3.has_value());
  EXPECT_THROW(discriminate_individual(domain_only, x, 1), ConfigError);
  EXPECT_EQ(discriminate_domain(domain_only, x).dim(1), 2u);
}

TEST(Model, ConfigValidationRejectsDegenerateSetups) {
  ArchConfig a = small_arch();
  a.amci_individuals = 1;
  EXPECT_THROW(init_model(a, true, true, 1), ConfigError);
  EXPECT_NO_THROW(init_model(a, false, true, 1));

  ArchConfig zero = small_arch();
  zero.out_channels = 0;
  EXPECT_THROW(init_model(zero, false, false, 1), ConfigError);

  ArchConfig negative = small_arch();
  negative.lambda_domain = -0.5;
  EXPECT_THROW(init_model(negative, true, true, 1), ConfigError);

  GfdannModel m = init_model(small_arch(), true, true, 17);
  Rng rng(3);
  Tensor bad = rng.gaussian_tensor({4, 3, 3, 2});
  EXPECT_THROW(classify(m, bad), DimensionError);
  EXPECT_THROW(extract_features(m, bad, 1), DimensionError);
  EXPECT_THROW(extract_features(m, small_batch(5), 3), ConfigError);
}

TEST(Model, InitIsSeedDeterministicAndSeedSensitive) {
  GfdannModel a = init_model(small_arch(), true, true, 21);
  GfdannModel b = init_model(small_arch(), true, true, 21);
  GfdannModel c = init_model(small_arch(), true, true, 22);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_NE(snapshot(a), snapshot(c));
}

TEST(Model, AblationVariantsShareTheTrunkInitialization) {
  GfdannModel full = init_model(small_arch(), true, true, 33);
  GfdannModel domain_only = init_model(small_arch(), false, true, 33);
  GfdannModel plain = init_model(small_arch(), false, false, 33);
  auto sf = snapshot(full), sd = snapshot(domain_only), sp = snapshot(plain);
  for (const auto& [name, data] : sp) {
    ASSERT_TRUE(sf.count(name)) << name;
    ASSERT_TRUE(sd.count(name)) << name;
    EXPECT_EQ(sf.at(name), data) << name;
    EXPECT_EQ(sd.at(name), data) << name;
  }
  EXPECT_EQ(sp.size(), 62u);
  EXPECT_EQ(sd.size(), 66u);
  EXPECT_EQ(sf.size(), 74u);
}

// Finite-difference checks of the four loss graphs, built without
// reversal points so the measured forward function matches the wiring
// the analytic pass differentiates.
TEST(ModelGradients, EveryLossGraphPassesFiniteDifferences) {
  ArchConfig arch = small_arch();
  GfdannModel m = init_model(arch, true, true, 51);
  Tensor xc = small_batch(61);
  Tensor x1 = small_batch(62);
  Tensor x2 = small_batch(63);
  Tensor xr = small_batch(64);
  std::vector<int> yc{0, 1, 0, 1}, y1{0, 1, 2, 0}, y2{0, 1, 1, 0}, yr{0, 0, 1, 1};

  std::vector<ParamBinding> bind;
  auto params_of = [&]() {
    std::vector<int> ids;
    for (const ParamBinding& b : bind) ids.push_back(b.node);
    return ids;
  };
  auto storage_of = [&]() {
    std::vector<Tensor*> ptrs;
    for (const ParamBinding& b : bind) ptrs.push_back(b.storage);
    return ptrs;
  };

  auto build_c = [&](Graph& g) -> GraphBuild {
    bind.clear();
    int x = g.constant(xc);
    int f1 = build_extractor_graph(g, arch, m.f1, x, true, &bind);
    int f2 = build_extractor_graph(g, arch, m.f2, x, true, &bind);
    int probs = build_classifier_graph(g, m.classifier, g.concat(f1, f2), &bind);
    return {g.focal_loss(probs, yc, 2.0, 1.0), params_of()};
  };
  auto build_d1 = [&](Graph& g) -> GraphBuild {
    bind.clear();
    int f = build_extractor_graph(g, arch, m.f1, g.constant(x1), true, &bind);
    return {g.focal_loss(build_mlp_graph(g, *m.d1, f, &bind), y1, 2.0, 1.0), params_of()};
  };
  auto build_d2 = [&](Graph& g) -> GraphBuild {
    bind.clear();
    int f = build_extractor_graph(g, arch, m.f2, g.constant(x2), true, &bind);
    return {g.focal_loss(build_mlp_graph(g, *m.d2, f, &bind), y2, 2.0, 1.0), params_of()};
  };
  auto build_d3 = [&](Graph& g) -> GraphBuild {
    bind.clear();
    int x = g.constant(xr);
    int f1 = build_extractor_graph(g, arch, m.f1, x, true, &bind);
    int f2 = build_extractor_graph(g, arch, m.f2, x, true, &bind);
    int cat = g.concat(f1, f2);
    return {g.focal_loss(build_mlp_graph(g, *m.d3, cat, &bind), yr, 2.0, 1.0), params_of()};
  };

  {
    Graph g;
    build_c(g);
    EXPECT_LT(gradient_check(build_c, storage_of()), 1e-4);
  }
  {
    Graph g;
    build_d1(g);
    EXPECT_LT(gradient_check(build_d1, storage_of()), 1e-4);
  }
  {
    Graph g;
    build_d2(g);
    EXPECT_LT(gradient_check(build_d2, storage_of()), 1e-4);
  }
  {
    Graph g;
    build_d3(g);
    EXPECT_LT(gradient_check(build_d3, storage_of()), 1e-4);
  }
}

// The composite objective (classification loss minus the three
// reversed discriminator losses) must backpropagate exactly the
// per-loss gradients combined with the composition's signs, and its
// value must compose from the four component values.
TEST(ModelGradients, CompositeObjectiveComposesPerLossGradients) {
  ArchConfig arch = small_arch();
  arch.lambda_individual_1 = 0.7;
  arch.lambda_individual_2 = 0.4;
  arch.lambda_domain = 1.3;
  GfdannModel m = init_model(arch, true, true, 77);
  Tensor xc = small_batch(81);
  Tensor x1 = small_batch(82);
  Tensor x2 = small_batch(83);
  Tensor xr = small_batch(84);
  std::vector<int> yc{0, 1, 0, 1}, y1{0, 1, 2, 0}, y2{0, 1, 1, 0}, yr{0, 0, 1, 1};

  auto accumulate = [](const Graph& g, const std::vector<ParamBinding>& bind,
                       std::map<Tensor*, Tensor>* into, double sign) {
    for (const ParamBinding& b : bind) {
      auto [it, fresh] = into->try_emplace(b.storage, Tensor(b.storage->shape, 0.0));
      const Tensor& gr = g.grad(b.node);
      for (std::size_t i = 0; i < gr.size(); ++i) it->second[i] += sign * gr[i];
    }
  };

  // One merged graph carrying all four losses and all three reversals.
  std::map<Tensor*, Tensor> got;
  double lc_val, l1_val, l2_val, l3_val, total_val;
  {
    Graph g;
    std::vector<ParamBinding> bind;
    int xcn = g.constant(xc);
    int f1c = build_extractor_graph(g, arch, m.f1, xcn, true, &bind);
    int f2c = build_extractor_graph(g, arch, m.f2, xcn, true, &bind);
    int lc = g.focal_loss(build_classifier_graph(g, m.classifier, g.concat(f1c, f2c), &bind), yc,
                          2.0, 1.0);
    int f1a = build_extractor_graph(g, arch, m.f1, g.constant(x1), true, &bind);
    int l1 = g.focal_loss(
        build_mlp_graph(g, *m.d1, g.grad_reverse(f1a, arch.lambda_individual_1), &bind), y1, 2.0,
        1.0);
    int f2h = build_extractor_graph(g, arch, m.f2, g.constant(x2), true, &bind);
    int l2 = g.focal_loss(
        build_mlp_graph(g, *m.d2, g.grad_reverse(f2h, arch.lambda_individual_2), &bind), y2, 2.0,
        1.0);
    int xrn = g.constant(xr);
    int f1r = build_extractor_graph(g, arch, m.f1, xrn, true, &bind);
    int f2r = build_extractor_graph(g, arch, m.f2, xrn, true, &bind);
    int l3 = g.focal_loss(
        build_mlp_graph(g, *m.d3, g.grad_reverse(g.concat(f1r, f2r), arch.lambda_domain), &bind),
        yr, 2.0, 1.0);
    int total = g.sub(g.sub(g.sub(lc, l1), l2), l3);
    g.backward(total);
    accumulate(g, bind, &got, 1.0);
    lc_val = g.value(lc)[0];
    l1_val = g.value(l1)[0];
    l2_val = g.value(l2)[0];
    l3_val = g.value(l3)[0];
    total_val = g.value(total)[0];
  }
  EXPECT_NEAR(total_val, lc_val - l1_val - l2_val - l3_val, 1e-12);

  // Four standalone graphs, each with its own reversal wiring, combined
  // with the composition's signs.
  std::map<Tensor*, Tensor> expected;
  {
    Graph g;
    std::vector<ParamBinding> bind;
    int x = g.constant(xc);
    int f1 = build_extractor_graph(g, arch, m.f1, x, true, &bind);
    int f2 = build_extractor_graph(g, arch, m.f2, x, true, &bind);
    int lc = g.focal_loss(build_classifier_graph(g, m.classifier, g.concat(f1, f2), &bind), yc,
                          2.0, 1.0);
    g.backward(lc);
    accumulate(g, bind, &expected, 1.0);
    EXPECT_DOUBLE_EQ(g.value(lc)[0], lc_val);
  }
  {
    Graph g;
    std::vector<ParamBinding> bind;
    int f = build_extractor_graph(g, arch, m.f1, g.constant(x1), true, &bind);
    int l1 = g.focal_loss(
        build_mlp_graph(g, *m.d1, g.grad_reverse(f, arch.lambda_individual_1), &bind), y1, 2.0,
        1.0);
    g.backward(l1);
    accumulate(g, bind, &expected, -1.0);
    EXPECT_DOUBLE_EQ(g.value(l1)[0], l1_val);
  }
  {
    Graph g;
    std::vector<ParamBinding> bind;
    int f = build_extractor_graph(g, arch, m.f2, g.constant(x2), true, &bind);
    int l2 = g.focal_loss(
        build_mlp_graph(g, *m.d2, g.grad_reverse(f, arch.lambda_individual_2), &bind), y2, 2.0,
        1.0);
    g.backward(l2);
    accumulate(g, bind, &expected, -1.0);
    EXPECT_DOUBLE_EQ(g.value(l2)[0], l2_val);
  }
  {
    Graph g;
    std::vector<ParamBinding> bind;
    int x = g.constant(xr);
    int f1 = build_extractor_graph(g, arch, m.f1, x, true, &bind);
    int f2 = build_extractor_graph(g, arch, m.f2, x, true, &bind);
    int l3 = g.focal_loss(
        build_mlp_graph(g, *m.d3, g.grad_reverse(g.concat(f1, f2), arch.lambda_domain), &bind),
        yr, 2.0, 1.0);
    g.backward(l3);
    accumulate(g, bind, &expected, -1.0);
    EXPECT_DOUBLE_EQ(g.value(l3)[0], l3_val);
  }

  ASSERT_EQ(got.size(), expected.size());
  for (auto& [ptr, grad] : got) {
    ASSERT_TRUE(expected.count(ptr));
    const Tensor& want = expected.at(ptr);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      double denom = std::abs(want[i]) + std::abs(grad[i]) + 1e-12;
      EXPECT_LT(std::abs(grad[i] - want[i]) / denom, 1e-11);
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir tmp;
  GfdannModel m = init_model(small_arch(), true, true, 91);
  m.f1.stages[0].bn.state.running_mean[0] = 0.25;
  m.f2.reduce_bn.state.running_var[1] = 3.5;
  m.classifier.b[0] = -0.125;
  auto file = tmp.path / "model.ckpt";
  save_checkpoint(m, file);
  GfdannModel r = load_checkpoint(file);
  EXPECT_EQ(snapshot(r), snapshot(m));
  EXPECT_EQ(r.gfe_enabled, m.gfe_enabled);
  EXPECT_EQ(r.dbda_enabled, m.dbda_enabled);
  EXPECT_EQ(r.arch.in_channels, m.arch.in_channels);
  EXPECT_EQ(r.arch.stage_channels, m.arch.stage_channels);
  EXPECT_DOUBLE_EQ(r.arch.lambda_domain, m.arch.lambda_domain);
}

TEST(Checkpoint, RoundTripWithoutDiscriminators) {
  TempDir tmp;
  GfdannModel m = init_model(small_arch(), false, false, 93);
  auto file = tmp.path / "plain.ckpt";
  save_checkpoint(m, file);
  GfdannModel r = load_checkpoint(file);
  EXPECT_FALSE(r.d1 || r.d2 || r.d3);
  EXPECT_EQ(snapshot(r), snapshot(m));
}

TEST(Checkpoint, CorruptionIsRejected) {
  TempDir tmp;
  GfdannModel m = init_model(small_arch(), true, true, 95);
  auto file = tmp.path / "model.ckpt";
  save_checkpoint(m, file);
  std::string good = read_bytes(file);
  auto patched = tmp.path / "patched.ckpt";

  {
    std::string bad = good;
    bad[0] = 'X';
    write_bytes(patched, bad);
    EXPECT_THROW(load_checkpoint(patched), DataError);
  }
  {
    std::string bad = good.substr(0, good.size() - 8);
    write_bytes(patched, bad);
    EXPECT_THROW(load_checkpoint(patched), DataError);
  }
  {
    std::string bad = good;
    bad.push_back('\7');
    write_bytes(patched, bad);
    EXPECT_THROW(load_checkpoint(patched), DataError);
  }
  {
    std::string bad = good;
    ASSERT_TRUE(replace_first(&bad, "\"version\":1", "\"version\":7"));
    write_bytes(patched, bad);
    EXPECT_THROW(load_checkpoint(patched), DataError);
  }
  {
    std::string bad = good;
    ASSERT_TRUE(replace_first(&bad, "gfdann-checkpoint", "gfdann-checkpoinX"));
    write_bytes(patched, bad);
    EXPECT_THROW(load_checkpoint(patched), DataError);
  }
  {
    std::string bad = good;
    ASSERT_TRUE(replace_first(&bad, "\"version\":1", "\"versiom\":1"));
    write_bytes(patched, bad);
    EXPECT_THROW(load_checkpoint(patched), DataError);
  }
  {
    std::string bad = good;
    ASSERT_TRUE(replace_first(&bad, "f1.stage0.dw_w", "f1.stage0.dw_q"));
    write_bytes(patched, bad);
    EXPECT_THROW(load_checkpoint(patched), DataError);
  }
  EXPECT_THROW(load_checkpoint(tmp.path / "does_not_exist.ckpt"), DataError);
}

}  // namespace
}  // namespace gfdann
