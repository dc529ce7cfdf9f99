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
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gfdann/autodiff.hpp"
#include "gfdann/errors.hpp"
#include "gfdann/rng.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

// Network geometry.  Feature tensors are (C, K, T); each extractor maps
// them to a flat vector of length d = out_channels * K * T; the
// classifier consumes both branches concatenated (2d).
struct ArchConfig {
  std::size_t in_channels = 5;  // C: CSP components per cell
  std::size_t freq_bins = 13;   // K
  std::size_t time_bins = 5;    // T
  std::array<std::size_t, 3> stage_channels{16, 32, 64};
  std::size_t out_channels = 4;  // width after the 1x1 reduction
  std::size_t disc_hidden = 64;

  // Class counts of the two individual discriminators: the number of
  // distinct training subjects in the aMCI branch and the HC branch.
  std::size_t amci_individuals = 10;
  std::size_t hc_individuals = 9;

  // Reversal strengths for the three adversarial paths.
  double lambda_individual_1 = 1.0;
  double lambda_individual_2 = 1.0;
  double lambda_domain = 1.0;

  // Batch norm after the 1x1 reduction as well (every conv is followed
  // by bn+relu by default; the 1x1's bn sits behind this toggle).
  bool reduce_batch_norm = true;

  std::size_t feature_length() const { return out_channels * freq_bins * time_bins; }

  void validate() const {
    if (in_channels == 0 || freq_bins == 0 || time_bins == 0 || out_channels == 0) {
      throw ConfigError("ArchConfig: input and output dimensions must be positive");
    }
    for (std::size_t c : stage_channels) {
      if (c == 0) throw ConfigError("ArchConfig: stage widths must be positive");
    }
    if (disc_hidden == 0) {
      throw ConfigError("ArchConfig: discriminator hidden width must be positive");
    }
    if (!(lambda_individual_1 >= 0.0) || !(lambda_individual_2 >= 0.0) ||
        !(lambda_domain >= 0.0)) {
      throw ConfigError("ArchConfig: reversal strengths must be >= 0");
    }
  }
};

// Scale/shift plus running statistics of one batch-norm layer.
struct BnParams {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

// One depthwise-separable stage: 3x3 depthwise, 1x1 pointwise, bn.
struct ConvStageParams {
  Tensor dw_w;  // (C_in, 3, 3)
  Tensor dw_b;  // (C_in)
  Tensor pw_w;  // (C_out, C_in)
  Tensor pw_b;  // (C_out)
  BnParams bn;
};

// One feature-extractor branch: three stages plus the 1x1 reduction.
struct ExtractorParams {
  std::array<ConvStageParams, 3> stages;
  Tensor reduce_w;  // (out_channels, stage_channels[2])
  Tensor reduce_b;  // (out_channels)
  BnParams reduce_bn;
};

// One-hidden-layer discriminator head.
struct MlpParams {
  Tensor w1;  // (hidden, in)
  Tensor b1;  // (hidden)
  Tensor w2;  // (classes, hidden)
  Tensor b2;  // (classes)
};

// Single fully connected layer over the concatenated features.
struct ClassifierParams {
  Tensor w;  // (2, 2d)
  Tensor b;  // (2)
};

// The dual-branch adversarial model.  Discriminator parameter sets
// exist only for enabled branches, so the plain baseline never even
// constructs them.
struct GfdannModel {
  ArchConfig arch;
  bool gfe_enabled = true;
  bool dbda_enabled = true;
  ExtractorParams f1;
  ExtractorParams f2;
  ClassifierParams classifier;
  std::optional<MlpParams> d1;  // individual discriminator, aMCI branch
  std::optional<MlpParams> d2;  // individual discriminator, HC branch
  std::optional<MlpParams> d3;  // domain discriminator, both branches
};

namespace detail {

inline Tensor fan_in_init(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_tensor(std::move(shape), -bound, bound);
}

inline BnParams make_bn(std::size_t width) {
  BnParams bn;
  bn.gamma = Tensor({width}, 1.0);
  bn.beta = Tensor({width}, 0.0);
  bn.state.running_mean = Tensor({width}, 0.0);
  bn.state.running_var = Tensor({width}, 1.0);
  return bn;
}

inline ExtractorParams make_extractor(const ArchConfig& arch, Rng& rng) {
  ExtractorParams p;
  std::size_t c_in = arch.in_channels;
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    std::size_t c_out = arch.stage_channels[s];
    ConvStageParams& st = p.stages[s];
    st.dw_w = fan_in_init(rng, {c_in, 3, 3}, 9);
    st.dw_b = fan_in_init(rng, {c_in}, 9);
    st.pw_w = fan_in_init(rng, {c_out, c_in}, c_in);
    st.pw_b = fan_in_init(rng, {c_out}, c_in);
    st.bn = make_bn(c_out);
    c_in = c_out;
  }
  p.reduce_w = fan_in_init(rng, {arch.out_channels, c_in}, c_in);
  p.reduce_b = fan_in_init(rng, {arch.out_channels}, c_in);
  p.reduce_bn = make_bn(arch.out_channels);
  return p;
}

inline MlpParams make_mlp(std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng) {
  MlpParams p;
  p.w1 = fan_in_init(rng, {hidden, in}, in);
  p.b1 = fan_in_init(rng, {hidden}, in);
  p.w2 = fan_in_init(rng, {classes, hidden}, hidden);
  p.b2 = fan_in_init(rng, {classes}, hidden);
  return p;
}

}  // namespace detail

// Builds a freshly initialized model.  The shared trunk (extractors and
// classifier) is drawn before any discriminator, so ablation variants
// share their trunk initialization at equal seeds.
inline GfdannModel init_model(const ArchConfig& arch, bool gfe_enabled, bool dbda_enabled,
                              std::uint64_t seed) {
  arch.validate();
  if (gfe_enabled && (arch.amci_individuals < 2 || arch.hc_individuals < 2)) {
    throw ConfigError("init_model: individual discrimination needs >= 2 subjects per group");
  }
  GfdannModel m;
  m.arch = arch;
  m.gfe_enabled = gfe_enabled;
  m.dbda_enabled = dbda_enabled;

  Rng rng(seed);
  m.f1 = detail::make_extractor(arch, rng);
  m.f2 = detail::make_extractor(arch, rng);
  std::size_t d = arch.feature_length();
  m.classifier.w = detail::fan_in_init(rng, {2, 2 * d}, 2 * d);
  m.classifier.b = detail::fan_in_init(rng, {2}, 2 * d);
  if (gfe_enabled) {
    m.d1 = detail::make_mlp(d, arch.disc_hidden, arch.amci_individuals, rng);
    m.d2 = detail::make_mlp(d, arch.disc_hidden, arch.hc_individuals, rng);
  }
  if (dbda_enabled) {
    m.d3 = detail::make_mlp(2 * d, arch.disc_hidden, 2, rng);
  }
  return m;
}

// A trainable tensor's persistent storage paired with its node in one
// particular graph build.
struct ParamBinding {
  Tensor* storage = nullptr;
  int node = -1;
};

inline int bind_param(Graph& g, Tensor& t, std::vector<ParamBinding>* bindings) {
  int id = g.param(t);
  if (bindings != nullptr) bindings->push_back({&t, id});
  return id;
}

inline void require_feature_batch(const ArchConfig& arch, const Tensor& batch,
                                  const char* where) {
  if (batch.rank() != 4 || batch.dim(1) != arch.in_channels || batch.dim(2) != arch.freq_bins ||
      batch.dim(3) != arch.time_bins) {
    throw DimensionError(std::string(where) + ": batch shape " + batch.shape_string() +
                         " does not match the configured (N, C, K, T) geometry");
  }
}

// Appends one extractor branch to the graph: three depthwise-separable
// stages (each conv -> bn -> relu), the 1x1 reduction, and a flatten to
// (N, d).  In training mode batch statistics are used and the running
// statistics advance.
inline int build_extractor_graph(Graph& g, const ArchConfig& arch, ExtractorParams& p, int x,
                                 bool training, std::vector<ParamBinding>* bindings) {
  // Parameters are bound in sequenced statements: argument evaluation
  // order is unspecified, and the binding order is part of the
  // reproducibility contract.
  int cur = x;
  for (ConvStageParams& st : p.stages) {
    int dw_w = bind_param(g, st.dw_w, bindings);
    int dw_b = bind_param(g, st.dw_b, bindings);
    int dw = g.depthwise_conv3x3(cur, dw_w, dw_b);
    int pw_w = bind_param(g, st.pw_w, bindings);
    int pw_b = bind_param(g, st.pw_b, bindings);
    int pw = g.pointwise_conv1x1(dw, pw_w, pw_b);
    int gamma = bind_param(g, st.bn.gamma, bindings);
    int beta = bind_param(g, st.bn.beta, bindings);
    int bn = g.batch_norm(pw, gamma, beta, &st.bn.state, training, training);
    cur = g.relu(bn);
  }
  int red_w = bind_param(g, p.reduce_w, bindings);
  int red_b = bind_param(g, p.reduce_b, bindings);
  int red = g.pointwise_conv1x1(cur, red_w, red_b);
  if (arch.reduce_batch_norm) {
    int gamma = bind_param(g, p.reduce_bn.gamma, bindings);
    int beta = bind_param(g, p.reduce_bn.beta, bindings);
    red = g.batch_norm(red, gamma, beta, &p.reduce_bn.state, training, training);
  }
  return g.flatten(g.relu(red));
}

// Discriminator head: one hidden fully connected layer with the
// extractor's nonlinearity, then softmax.
inline int build_mlp_graph(Graph& g, MlpParams& p, int x, std::vector<ParamBinding>* bindings) {
  int w1 = bind_param(g, p.w1, bindings);
  int b1 = bind_param(g, p.b1, bindings);
  int h = g.relu(g.fully_connected(x, w1, b1));
  int w2 = bind_param(g, p.w2, bindings);
  int b2 = bind_param(g, p.b2, bindings);
  return g.softmax(g.fully_connected(h, w2, b2));
}

// Classifier head on concatenated branch features [f1; f2]: a single
// fully connected layer and softmax.
inline int build_classifier_graph(Graph& g, ClassifierParams& p, int features_cat,
                                  std::vector<ParamBinding>* bindings) {
  int w = bind_param(g, p.w, bindings);
  int b = bind_param(g, p.b, bindings);
  return g.softmax(g.fully_connected(features_cat, w, b));
}

// Inference-mode forward passes.  These take the model by reference to
// reuse the training graph builders but never mutate it: batch norm
// runs on frozen running statistics.

inline Tensor extract_features(GfdannModel& model, const Tensor& batch, int branch) {
  require_feature_batch(model.arch, batch, "extract_features");
  if (branch != 1 && branch != 2) throw ConfigError("extract_features: branch must be 1 or 2");
  Graph g;
  int x = g.constant(batch);
  ExtractorParams& p = branch == 1 ? model.f1 : model.f2;
  int f = build_extractor_graph(g, model.arch, p, x, false, nullptr);
  return g.value(f);
}

inline Tensor classify(GfdannModel& model, const Tensor& batch) {
  require_feature_batch(model.arch, batch, "classify");
  Graph g;
  int x = g.constant(batch);
  int f1 = build_extractor_graph(g, model.arch, model.f1, x, false, nullptr);
  int f2 = build_extractor_graph(g, model.arch, model.f2, x, false, nullptr);
  int probs = build_classifier_graph(g, model.classifier, g.concat(f1, f2), nullptr);
  return g.value(probs);
}

// Individual discriminator probabilities for one branch.  Batches must
// be routed by the caller: branch 1 sees only aMCI-group samples,
// branch 2 only HC-group samples.
inline Tensor discriminate_individual(GfdannModel& model, const Tensor& batch, int branch) {
  require_feature_batch(model.arch, batch, "discriminate_individual");
  if (!model.gfe_enabled) {
    throw ConfigError("discriminate_individual: individual discriminators are disabled");
  }
  if (branch != 1 && branch != 2) {
    throw ConfigError("discriminate_individual: branch must be 1 or 2");
  }
  Graph g;
  int x = g.constant(batch);
  ExtractorParams& ext = branch == 1 ? model.f1 : model.f2;
  MlpParams& head = branch == 1 ? *model.d1 : *model.d2;
  double lambda =
      branch == 1 ? model.arch.lambda_individual_1 : model.arch.lambda_individual_2;
  int f = build_extractor_graph(g, model.arch, ext, x, false, nullptr);
  int probs = build_mlp_graph(g, head, g.grad_reverse(f, lambda), nullptr);
  return g.value(probs);
}

// Domain discriminator probabilities over {source=0, target=1}; reads
// both branches through a single reversal point.
inline Tensor discriminate_domain(GfdannModel& model, const Tensor& batch) {
  require_feature_batch(model.arch, batch, "discriminate_domain");
  if (!model.dbda_enabled) {
    throw ConfigError("discriminate_domain: the domain discriminator is disabled");
  }
  Graph g;
  int x = g.constant(batch);
  int f1 = build_extractor_graph(g, model.arch, model.f1, x, false, nullptr);
  int f2 = build_extractor_graph(g, model.arch, model.f2, x, false, nullptr);
  int cat = g.concat(f1, f2);
  int probs = build_mlp_graph(g, *model.d3, g.grad_reverse(cat, model.arch.lambda_domain),
                              nullptr);
  return g.value(probs);
}

// Fixed-order enumeration of every tensor in the model, including batch
// norm running statistics.  Both the checkpoint format and parameter
// comparisons in tests rely on this order.
template <typename Model, typename Fn>
void for_each_named_tensor(Model& m, Fn&& fn) {
  auto walk_extractor = [&](auto& ext, const std::string& prefix) {
    for (std::size_t s = 0; s < ext.stages.size(); ++s) {
      auto& st = ext.stages[s];
      std::string base = prefix + ".stage" + std::to_string(s);
      fn(base + ".dw_w", st.dw_w);
      fn(base + ".dw_b", st.dw_b);
      fn(base + ".pw_w", st.pw_w);
      fn(base + ".pw_b", st.pw_b);
      fn(base + ".bn_gamma", st.bn.gamma);
      fn(base + ".bn_beta", st.bn.beta);
      fn(base + ".bn_mean", st.bn.state.running_mean);
      fn(base + ".bn_var", st.bn.state.running_var);
    }
    fn(prefix + ".reduce_w", ext.reduce_w);
    fn(prefix + ".reduce_b", ext.reduce_b);
    fn(prefix + ".reduce_bn_gamma", ext.reduce_bn.gamma);
    fn(prefix + ".reduce_bn_beta", ext.reduce_bn.beta);
    fn(prefix + ".reduce_bn_mean", ext.reduce_bn.state.running_mean);
    fn(prefix + ".reduce_bn_var", ext.reduce_bn.state.running_var);
  };
  auto walk_mlp = [&](auto& mlp, const std::string& prefix) {
    fn(prefix + ".w1", mlp.w1);
    fn(prefix + ".b1", mlp.b1);
    fn(prefix + ".w2", mlp.w2);
    fn(prefix + ".b2", mlp.b2);
  };
  walk_extractor(m.f1, "f1");
  walk_extractor(m.f2, "f2");
  fn("classifier.w", m.classifier.w);
  fn("classifier.b", m.classifier.b);
  if (m.d1) walk_mlp(*m.d1, "d1");
  if (m.d2) walk_mlp(*m.d2, "d2");
  if (m.d3) walk_mlp(*m.d3, "d3");
}

namespace detail {

inline nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"in_channels", a.in_channels},
          {"freq_bins", a.freq_bins},
          {"time_bins", a.time_bins},
          {"stage_channels", a.stage_channels},
          {"out_channels", a.out_channels},
          {"disc_hidden", a.disc_hidden},
          {"amci_individuals", a.amci_individuals},
          {"hc_individuals", a.hc_individuals},
          {"lambda_individual_1", a.lambda_individual_1},
          {"lambda_individual_2", a.lambda_individual_2},
          {"lambda_domain", a.lambda_domain},
          {"reduce_batch_norm", a.reduce_batch_norm}};
}

inline void reject_unknown_json_keys(const nlohmann::json& obj, const std::set<std::string>& known,
                                     const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.find(it.key()) == known.end()) {
      throw DataError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  reject_unknown_json_keys(j,
                           {"in_channels", "freq_bins", "time_bins", "stage_channels",
                            "out_channels", "disc_hidden", "amci_individuals", "hc_individuals",
                            "lambda_individual_1", "lambda_individual_2", "lambda_domain",
                            "reduce_batch_norm"},
                           "checkpoint arch");
  ArchConfig a;
  a.in_channels = j.at("in_channels").get<std::size_t>();
  a.freq_bins = j.at("freq_bins").get<std::size_t>();
  a.time_bins = j.at("time_bins").get<std::size_t>();
  auto stages = j.at("stage_channels").get<std::vector<std::size_t>>();
  if (stages.size() != a.stage_channels.size()) {
    throw DataError("checkpoint arch: stage_channels must list exactly 3 widths");
  }
  std::copy(stages.begin(), stages.end(), a.stage_channels.begin());
  a.out_channels = j.at("out_channels").get<std::size_t>();
  a.disc_hidden = j.at("disc_hidden").get<std::size_t>();
  a.amci_individuals = j.at("amci_individuals").get<std::size_t>();
  a.hc_individuals = j.at("hc_individuals").get<std::size_t>();
  a.lambda_individual_1 = j.at("lambda_individual_1").get<double>();
  a.lambda_individual_2 = j.at("lambda_individual_2").get<double>();
  a.lambda_domain = j.at("lambda_domain").get<double>();
  a.reduce_batch_norm = j.at("reduce_batch_norm").get<bool>();
  a.validate();
  return a;
}

inline constexpr char kCheckpointMagic[4] = {'G', 'F', 'D', 'N'};

}  // namespace detail

// Writes a versioned checkpoint: 4-byte magic, little-endian 32-bit
// header length, JSON header (geometry, flags, tensor directory), then
// every tensor as raw little-endian 64-bit floats in directory order.
inline void save_checkpoint(const GfdannModel& model, const std::filesystem::path& file) {
  nlohmann::json header;
  header["format"] = "gfdann-checkpoint";
  header["version"] = 1;
  header["arch"] = detail::arch_to_json(model.arch);
  header["gfe_enabled"] = model.gfe_enabled;
  header["dbda_enabled"] = model.dbda_enabled;
  header["tensors"] = nlohmann::json::array();
  for_each_named_tensor(model, [&](const std::string& name, const Tensor& t) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape}});
  });

  std::string htext = header.dump();
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_checkpoint: cannot open " + file.string());
  out.write(detail::kCheckpointMagic, 4);
  auto hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for_each_named_tensor(model, [&](const std::string&, const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  });
  if (!out) throw DataError("save_checkpoint: short write to " + file.string());
}

inline GfdannModel load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + file.string());
  char magic[4];
  std::uint32_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0) {
    throw DataError("load_checkpoint: not a checkpoint file");
  }
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (!in) throw DataError("load_checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
    detail::reject_unknown_json_keys(
        header, {"format", "version", "arch", "gfe_enabled", "dbda_enabled", "tensors"},
        "checkpoint header");
    if (header.at("format").get<std::string>() != "gfdann-checkpoint") {
      throw DataError("load_checkpoint: unrecognized format tag");
    }
    if (header.at("version").get<int>() != 1) {
      throw DataError("load_checkpoint: unsupported version");
    }

    GfdannModel model = init_model(detail::arch_from_json(header.at("arch")),
                                   header.at("gfe_enabled").get<bool>(),
                                   header.at("dbda_enabled").get<bool>(), 0);

    const auto& dir = header.at("tensors");
    std::size_t idx = 0;
    for_each_named_tensor(model, [&](const std::string& name, Tensor& t) {
      if (idx >= dir.size()) throw DataError("load_checkpoint: tensor directory too short");
      const auto& entry = dir.at(idx);
      detail::reject_unknown_json_keys(entry, {"name", "shape"}, "checkpoint tensor entry");
      if (entry.at("name").get<std::string>() != name ||
          entry.at("shape").get<std::vector<std::size_t>>() != t.shape) {
        throw DataError("load_checkpoint: tensor directory mismatch at '" + name + "'");
      }
      in.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
      idx += 1;
    });
    if (!in) throw DataError("load_checkpoint: truncated tensor payload");
    if (idx != dir.size()) throw DataError("load_checkpoint: tensor directory too long");
    in.peek();
    if (!in.eof()) throw DataError("load_checkpoint: trailing bytes after payload");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_checkpoint: malformed header: " + std::string(e.what()));
  }
}

}  // namespace gfdann
