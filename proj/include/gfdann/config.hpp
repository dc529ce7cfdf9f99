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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>

#include <json.hpp>

#include "gfdann/errors.hpp"
#include "gfdann/model.hpp"
#include "gfdann/shallow_features.hpp"
#include "gfdann/synth.hpp"
#include "gfdann/training.hpp"

namespace gfdann {

inline constexpr int kConfigSchemaVersion = 1;

// Which pieces of the dual-branch adversarial design a run enables.
struct VariantFlags {
  bool gfe = true;   // group feature extraction branches + individual discriminators
  bool dbda = true;  // dual-branch domain adversarial path
};

inline VariantFlags variant_flags(const std::string& name) {
  if (name == "basenet1") return {false, false};
  if (name == "basenet2") return {true, false};
  if (name == "basenet3") return {false, true};
  if (name == "gfdann") return {true, true};
  throw ConfigError("config: unknown variant '" + name +
                    "' (expected basenet1, basenet2, basenet3, or gfdann)");
}

// Band grid geometry held as parameters so that the time axis can follow
// the dataset's epoch length at run time.
struct GridSettings {
  double freq_min = 2.0;
  double freq_max = 30.0;
  double freq_width = 4.0;
  double freq_step = 2.0;
  double time_width = 0.5;
  double time_step = 0.5;

  BandGrid build(double epoch_length) const {
    BandGrid g;
    g.frequency_bands = make_frequency_bands(freq_min, freq_max, freq_width, freq_step);
    g.time_bands = make_time_bands(epoch_length, time_width, time_step);
    g.validate();
    return g;
  }
};

// One experiment, fully described: where the data comes from, how features
// are formed, the network and training recipe, and where artifacts go.
struct ExperimentConfig {
  std::uint64_t seed = 0;  // master seed; generation and training derive from it
  std::string output_dir = "out";
  std::string variant = "gfdann";
  std::size_t jobs = 1;
  std::optional<std::string> dataset_dir;  // load this dataset instead of generating
  int projection_group = kGroupAmci;       // class whose samples the projection export uses
  int projection_subject = -1;             // held-out subject for projection; -1 = first

  GeneratorConfig generator;
  GridSettings grid;
  FeatureSettings features;
  ArchConfig arch;  // geometry fields are derived from grid/features at run time
  TrainConfig training;

  void validate() const {
    variant_flags(variant);
    if (jobs == 0) throw ConfigError("config: jobs must be >= 1");
    if (projection_group != kGroupHealthy && projection_group != kGroupAmci) {
      throw ConfigError("config: projection_group must be 0 or 1");
    }
    training.validate();
    arch.validate();
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("config: unknown key '" + (where.empty() ? "" : where + ".") +
                        item.key() + "'");
    }
  }
}

inline const nlohmann::json* find_key(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline void fetch(const nlohmann::json& j, const std::string& where, const char* key,
                  double& out) {
  if (const nlohmann::json* v = find_key(j, key)) {
    if (!v->is_number()) throw ConfigError("config: '" + where + key + "' must be a number");
    out = v->get<double>();
  }
}

inline void fetch(const nlohmann::json& j, const std::string& where, const char* key,
                  bool& out) {
  if (const nlohmann::json* v = find_key(j, key)) {
    if (!v->is_boolean()) throw ConfigError("config: '" + where + key + "' must be a boolean");
    out = v->get<bool>();
  }
}

inline void fetch(const nlohmann::json& j, const std::string& where, const char* key,
                  std::size_t& out) {
  if (const nlohmann::json* v = find_key(j, key)) {
    if (!v->is_number_unsigned()) {
      throw ConfigError("config: '" + where + key + "' must be a non-negative integer");
    }
    out = v->get<std::size_t>();
  }
}

inline void fetch(const nlohmann::json& j, const std::string& where, const char* key,
                  int& out) {
  if (const nlohmann::json* v = find_key(j, key)) {
    if (!v->is_number_integer()) {
      throw ConfigError("config: '" + where + key + "' must be an integer");
    }
    out = v->get<int>();
  }
}

inline void fetch(const nlohmann::json& j, const std::string& where, const char* key,
                  std::string& out) {
  if (const nlohmann::json* v = find_key(j, key)) {
    if (!v->is_string()) throw ConfigError("config: '" + where + key + "' must be a string");
    out = v->get<std::string>();
  }
}

inline void parse_generator(const nlohmann::json& j, GeneratorConfig& g) {
  check_keys(j, "generator",
             {"n_amci_subjects", "n_hc_subjects", "epochs_per_subject", "epoch_length",
              "sample_rate", "channels", "group_effect_size", "individual_effect_size",
              "domain_shift"});
  fetch(j, "generator.", "n_amci_subjects", g.n_amci_subjects);
  fetch(j, "generator.", "n_hc_subjects", g.n_hc_subjects);
  fetch(j, "generator.", "epochs_per_subject", g.epochs_per_subject);
  fetch(j, "generator.", "epoch_length", g.epoch_length);
  fetch(j, "generator.", "sample_rate", g.sample_rate);
  fetch(j, "generator.", "channels", g.channels);
  fetch(j, "generator.", "group_effect_size", g.group_effect_size);
  fetch(j, "generator.", "individual_effect_size", g.individual_effect_size);
  if (const nlohmann::json* shift = find_key(j, "domain_shift")) {
    if (!shift->is_object()) throw ConfigError("config: 'generator.domain_shift' must be an object");
    check_keys(*shift, "generator.domain_shift", {"gain_drift", "noise_scale"});
    fetch(*shift, "generator.domain_shift.", "gain_drift", g.domain_shift.gain_drift);
    fetch(*shift, "generator.domain_shift.", "noise_scale", g.domain_shift.noise_scale);
  }
}

inline void parse_grid(const nlohmann::json& j, GridSettings& g) {
  check_keys(j, "grid",
             {"freq_min", "freq_max", "freq_width", "freq_step", "time_width", "time_step"});
  fetch(j, "grid.", "freq_min", g.freq_min);
  fetch(j, "grid.", "freq_max", g.freq_max);
  fetch(j, "grid.", "freq_width", g.freq_width);
  fetch(j, "grid.", "freq_step", g.freq_step);
  fetch(j, "grid.", "time_width", g.time_width);
  fetch(j, "grid.", "time_step", g.time_step);
}

inline void parse_features(const nlohmann::json& j, FeatureSettings& f) {
  check_keys(j, "features",
             {"n_components", "regularization", "log_power", "both_ends", "preprocess",
              "bandpass_low", "bandpass_high", "notch", "notch_low", "notch_high"});
  fetch(j, "features.", "n_components", f.n_components);
  fetch(j, "features.", "regularization", f.regularization);
  fetch(j, "features.", "log_power", f.log_power);
  fetch(j, "features.", "both_ends", f.both_ends);
  fetch(j, "features.", "preprocess", f.preprocess);
  fetch(j, "features.", "bandpass_low", f.bandpass_low);
  fetch(j, "features.", "bandpass_high", f.bandpass_high);
  fetch(j, "features.", "notch", f.notch);
  fetch(j, "features.", "notch_low", f.notch_low);
  fetch(j, "features.", "notch_high", f.notch_high);
}

inline void parse_arch(const nlohmann::json& j, ArchConfig& a) {
  check_keys(j, "arch",
             {"stage_channels", "out_channels", "disc_hidden", "lambda_individual_1",
              "lambda_individual_2", "lambda_domain", "reduce_batch_norm"});
  if (const nlohmann::json* stages = find_key(j, "stage_channels")) {
    if (!stages->is_array() || stages->size() != a.stage_channels.size()) {
      throw ConfigError("config: 'arch.stage_channels' must be an array of " +
                        std::to_string(a.stage_channels.size()) + " widths");
    }
    for (std::size_t i = 0; i < a.stage_channels.size(); ++i) {
      const nlohmann::json& v = (*stages)[i];
      if (!v.is_number_unsigned()) {
        throw ConfigError("config: 'arch.stage_channels' entries must be non-negative integers");
      }
      a.stage_channels[i] = v.get<std::size_t>();
    }
  }
  fetch(j, "arch.", "out_channels", a.out_channels);
  fetch(j, "arch.", "disc_hidden", a.disc_hidden);
  fetch(j, "arch.", "lambda_individual_1", a.lambda_individual_1);
  fetch(j, "arch.", "lambda_individual_2", a.lambda_individual_2);
  fetch(j, "arch.", "lambda_domain", a.lambda_domain);
  fetch(j, "arch.", "reduce_batch_norm", a.reduce_batch_norm);
}

inline void parse_training(const nlohmann::json& j, TrainConfig& t) {
  check_keys(j, "training",
             {"n_d", "n_c", "lr_d1", "lr_d2", "lr_d3", "lr_c", "lr_decay", "batch_size",
              "focal_gamma", "focal_alpha", "interleaved"});
  fetch(j, "training.", "n_d", t.n_d);
  fetch(j, "training.", "n_c", t.n_c);
  fetch(j, "training.", "lr_d1", t.lr_d1);
  fetch(j, "training.", "lr_d2", t.lr_d2);
  fetch(j, "training.", "lr_d3", t.lr_d3);
  fetch(j, "training.", "lr_c", t.lr_c);
  fetch(j, "training.", "lr_decay", t.lr_decay);
  fetch(j, "training.", "batch_size", t.batch_size);
  fetch(j, "training.", "focal_gamma", t.focal_gamma);
  fetch(j, "training.", "focal_alpha", t.focal_alpha);
  fetch(j, "training.", "interleaved", t.interleaved);
}

}  // namespace detail

// Parses and schema-validates an experiment description. Every key is
// optional except schema_version; unknown keys are rejected by name.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: document root must be an object");
  detail::check_keys(j, "",
                     {"schema_version", "seed", "output_dir", "variant", "jobs", "dataset_dir",
                      "projection_group", "projection_subject", "generator", "grid", "features",
                      "arch", "training"});

  const nlohmann::json* version = detail::find_key(j, "schema_version");
  if (version == nullptr) throw ConfigError("config: missing required key 'schema_version'");
  if (!version->is_number_integer() || version->get<int>() != kConfigSchemaVersion) {
    throw ConfigError("config: schema_version must be " + std::to_string(kConfigSchemaVersion));
  }

  ExperimentConfig cfg;
  detail::fetch(j, "", "seed", cfg.seed);
  detail::fetch(j, "", "output_dir", cfg.output_dir);
  detail::fetch(j, "", "variant", cfg.variant);
  detail::fetch(j, "", "jobs", cfg.jobs);
  if (const nlohmann::json* dir = detail::find_key(j, "dataset_dir")) {
    if (!dir->is_string()) throw ConfigError("config: 'dataset_dir' must be a string");
    cfg.dataset_dir = dir->get<std::string>();
  }
  detail::fetch(j, "", "projection_group", cfg.projection_group);
  detail::fetch(j, "", "projection_subject", cfg.projection_subject);

  auto parse_section = [&](const char* key, auto&& parser) {
    if (const nlohmann::json* section = detail::find_key(j, key)) {
      if (!section->is_object()) {
        throw ConfigError("config: '" + std::string(key) + "' must be an object");
      }
      parser(*section);
    }
  };
  parse_section("generator", [&](const nlohmann::json& s) { detail::parse_generator(s, cfg.generator); });
  parse_section("grid", [&](const nlohmann::json& s) { detail::parse_grid(s, cfg.grid); });
  parse_section("features", [&](const nlohmann::json& s) { detail::parse_features(s, cfg.features); });
  parse_section("arch", [&](const nlohmann::json& s) { detail::parse_arch(s, cfg.arch); });
  parse_section("training", [&](const nlohmann::json& s) { detail::parse_training(s, cfg.training); });

  // The master seed drives both generation and training; module-level
  // stream tags keep the draws independent.
  cfg.generator.seed = cfg.seed;
  cfg.training.seed = cfg.seed;

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

// Serializes the resolved configuration, flag overrides included, so a
// run can be reproduced from its snapshot alone.
inline nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["variant"] = cfg.variant;
  j["jobs"] = cfg.jobs;
  if (cfg.dataset_dir) j["dataset_dir"] = *cfg.dataset_dir;
  j["projection_group"] = cfg.projection_group;
  j["projection_subject"] = cfg.projection_subject;
  j["generator"] = {{"n_amci_subjects", cfg.generator.n_amci_subjects},
                    {"n_hc_subjects", cfg.generator.n_hc_subjects},
                    {"epochs_per_subject", cfg.generator.epochs_per_subject},
                    {"epoch_length", cfg.generator.epoch_length},
                    {"sample_rate", cfg.generator.sample_rate},
                    {"channels", cfg.generator.channels},
                    {"group_effect_size", cfg.generator.group_effect_size},
                    {"individual_effect_size", cfg.generator.individual_effect_size},
                    {"domain_shift",
                     {{"gain_drift", cfg.generator.domain_shift.gain_drift},
                      {"noise_scale", cfg.generator.domain_shift.noise_scale}}}};
  j["grid"] = {{"freq_min", cfg.grid.freq_min},   {"freq_max", cfg.grid.freq_max},
               {"freq_width", cfg.grid.freq_width}, {"freq_step", cfg.grid.freq_step},
               {"time_width", cfg.grid.time_width}, {"time_step", cfg.grid.time_step}};
  j["features"] = {{"n_components", cfg.features.n_components},
                   {"regularization", cfg.features.regularization},
                   {"log_power", cfg.features.log_power},
                   {"both_ends", cfg.features.both_ends},
                   {"preprocess", cfg.features.preprocess},
                   {"bandpass_low", cfg.features.bandpass_low},
                   {"bandpass_high", cfg.features.bandpass_high},
                   {"notch", cfg.features.notch},
                   {"notch_low", cfg.features.notch_low},
                   {"notch_high", cfg.features.notch_high}};
  j["arch"] = {{"stage_channels", cfg.arch.stage_channels},
               {"out_channels", cfg.arch.out_channels},
               {"disc_hidden", cfg.arch.disc_hidden},
               {"lambda_individual_1", cfg.arch.lambda_individual_1},
               {"lambda_individual_2", cfg.arch.lambda_individual_2},
               {"lambda_domain", cfg.arch.lambda_domain},
               {"reduce_batch_norm", cfg.arch.reduce_batch_norm}};
  j["training"] = {{"n_d", cfg.training.n_d},
                   {"n_c", cfg.training.n_c},
                   {"lr_d1", cfg.training.lr_d1},
                   {"lr_d2", cfg.training.lr_d2},
                   {"lr_d3", cfg.training.lr_d3},
                   {"lr_c", cfg.training.lr_c},
                   {"lr_decay", cfg.training.lr_decay},
                   {"batch_size", cfg.training.batch_size},
                   {"focal_gamma", cfg.training.focal_gamma},
                   {"focal_alpha", cfg.training.focal_alpha},
                   {"interleaved", cfg.training.interleaved}};
  return j;
}

}  // namespace gfdann
