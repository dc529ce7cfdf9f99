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
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gfdann/errors.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

static_assert(std::endian::native == std::endian::little,
              "dataset and checkpoint containers are little-endian");

inline constexpr int kGroupHealthy = 0;
inline constexpr int kGroupAmci = 1;
inline constexpr int kDomainSource = 0;
inline constexpr int kDomainTarget = 1;

// One EEG epoch: (channels, time) samples plus provenance labels.
struct Epoch {
  Tensor samples;
  double sample_rate = 0.0;
  int subject_id = -1;
  int group = kGroupHealthy;    // 1 = aMCI, 0 = HC
  int domain = kDomainSource;   // 0 = source, 1 = target
  int epoch_index = 0;          // per-subject sample index
};

// Domain-shift parameters carried with a dataset so that target-domain
// splits are reproducible from the dataset alone.
struct DomainShiftSpec {
  double gain_drift = 0.0;
  double noise_scale = 0.0;
};

// A whole multi-subject dataset with uniform geometry.
struct EpochSet {
  double sample_rate = 0.0;
  std::size_t channels = 0;
  std::size_t epoch_samples = 0;
  std::uint64_t seed = 0;  // generation seed; drives domain-shift draws
  DomainShiftSpec domain_shift;
  std::vector<Epoch> epochs;

  std::vector<int> subject_ids() const {
    std::set<int> ids;
    for (const Epoch& e : epochs) ids.insert(e.subject_id);
    return std::vector<int>(ids.begin(), ids.end());
  }

  int group_of(int subject_id) const {
    for (const Epoch& e : epochs) {
      if (e.subject_id == subject_id) return e.group;
    }
    throw DataError("group_of: unknown subject " + std::to_string(subject_id));
  }

  std::vector<const Epoch*> epochs_of(int subject_id) const {
    std::vector<const Epoch*> out;
    for (const Epoch& e : epochs) {
      if (e.subject_id == subject_id) out.push_back(&e);
    }
    if (out.empty()) throw DataError("epochs_of: unknown subject " + std::to_string(subject_id));
    return out;
  }
};

namespace detail {

inline void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

inline void read_doubles(std::ifstream& in, double* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw DataError("dataset: truncated binary payload");
}

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::set<std::string>& known, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.find(it.key()) == known.end()) {
      throw DataError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

inline std::string subject_file_name(int subject_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "subject_%03d.bin", subject_id);
  return buf;
}

}  // namespace detail

// Writes a dataset directory: manifest.json plus one binary file per
// subject of little-endian 64-bit floats, (epochs, channels, time)
// row-major.
inline void save_dataset(const EpochSet& set, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "gfdann-epochs";
  manifest["version"] = 1;
  manifest["sample_rate"] = set.sample_rate;
  manifest["channels"] = set.channels;
  manifest["epoch_samples"] = set.epoch_samples;
  manifest["seed"] = set.seed;
  manifest["domain_shift"] = {{"gain_drift", set.domain_shift.gain_drift},
                              {"noise_scale", set.domain_shift.noise_scale}};
  manifest["subjects"] = nlohmann::json::array();

  for (int sid : set.subject_ids()) {
    std::vector<const Epoch*> eps = set.epochs_of(sid);
    std::sort(eps.begin(), eps.end(),
              [](const Epoch* a, const Epoch* b) { return a->epoch_index < b->epoch_index; });
    std::string fname = detail::subject_file_name(sid);
    std::ofstream bin(dir / fname, std::ios::binary | std::ios::trunc);
    if (!bin) throw DataError("save_dataset: cannot open " + (dir / fname).string());
    for (const Epoch* e : eps) {
      if (e->samples.shape != std::vector<std::size_t>{set.channels, set.epoch_samples}) {
        throw DimensionError("save_dataset: epoch shape " + e->samples.shape_string() +
                             " does not match dataset geometry");
      }
      detail::write_doubles(bin, e->samples.data.data(), e->samples.size());
    }
    if (!bin) throw DataError("save_dataset: short write to " + fname);
    manifest["subjects"].push_back({{"id", sid},
                                    {"group", eps.front()->group},
                                    {"domain", eps.front()->domain},
                                    {"epochs", eps.size()},
                                    {"file", fname}});
  }

  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw DataError("save_dataset: cannot open manifest.json");
  mf << manifest.dump(2) << "\n";
}

// Loads a dataset directory written by save_dataset, validating the
// manifest and every payload size.
inline EpochSet load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::path mpath = dir / "manifest.json";
  std::ifstream mf(mpath);
  if (!mf) throw DataError("load_dataset: missing " + mpath.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_dataset: malformed manifest.json: " + std::string(e.what()));
  }

  detail::reject_unknown_keys(manifest,
                              {"format", "version", "sample_rate", "channels", "epoch_samples",
                               "seed", "domain_shift", "subjects"},
                              "manifest.json");
  try {
    if (manifest.at("format").get<std::string>() != "gfdann-epochs") {
      throw DataError("load_dataset: unrecognized format tag");
    }
    if (manifest.at("version").get<int>() != 1) {
      throw DataError("load_dataset: unsupported manifest version");
    }

    EpochSet set;
    set.sample_rate = manifest.at("sample_rate").get<double>();
    set.channels = manifest.at("channels").get<std::size_t>();
    set.epoch_samples = manifest.at("epoch_samples").get<std::size_t>();
    set.seed = manifest.at("seed").get<std::uint64_t>();
    const auto& ds = manifest.at("domain_shift");
    detail::reject_unknown_keys(ds, {"gain_drift", "noise_scale"}, "manifest domain_shift");
    set.domain_shift.gain_drift = ds.at("gain_drift").get<double>();
    set.domain_shift.noise_scale = ds.at("noise_scale").get<double>();
    if (set.channels == 0 || set.epoch_samples == 0 || !(set.sample_rate > 0.0)) {
      throw DataError("load_dataset: invalid dataset geometry in manifest");
    }

    for (const auto& subj : manifest.at("subjects")) {
      detail::reject_unknown_keys(subj, {"id", "group", "domain", "epochs", "file"},
                                  "manifest subject entry");
      int sid = subj.at("id").get<int>();
      int group = subj.at("group").get<int>();
      int domain = subj.at("domain").get<int>();
      std::size_t count = subj.at("epochs").get<std::size_t>();
      fs::path bpath = dir / subj.at("file").get<std::string>();
      std::ifstream bin(bpath, std::ios::binary);
      if (!bin) throw DataError("load_dataset: missing " + bpath.string());
      std::size_t expected = count * set.channels * set.epoch_samples * sizeof(double);
      if (fs::file_size(bpath) != expected) {
        throw DataError("load_dataset: " + bpath.string() + " has " +
                        std::to_string(fs::file_size(bpath)) + " bytes, expected " +
                        std::to_string(expected));
      }
      for (std::size_t v = 0; v < count; ++v) {
        Epoch e;
        e.samples = Tensor({set.channels, set.epoch_samples});
        detail::read_doubles(bin, e.samples.data.data(), e.samples.size());
        e.sample_rate = set.sample_rate;
        e.subject_id = sid;
        e.group = group;
        e.domain = domain;
        e.epoch_index = static_cast<int>(v);
        set.epochs.push_back(std::move(e));
      }
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_dataset: manifest field error: " + std::string(e.what()));
  }
}

}  // namespace gfdann
