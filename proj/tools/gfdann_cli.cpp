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

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gfdann/config.hpp"
#include "gfdann/epochs.hpp"
#include "gfdann/errors.hpp"
#include "gfdann/evaluation.hpp"
#include "gfdann/logging.hpp"
#include "gfdann/rng.hpp"
#include "gfdann/shallow_features.hpp"
#include "gfdann/synth.hpp"
#include "gfdann/training.hpp"

namespace gfdann {
namespace {

namespace fs = std::filesystem;

// All artifact writes go through a temp-then-rename so an interrupted run
// never leaves a half-written file behind.
void atomic_write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string fmt17(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string fmt_pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << (100.0 * *v) << "%";
  return s.str();
}

EpochSet obtain_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset_dir) {
    log_info("loading dataset from " + *cfg.dataset_dir);
    return load_dataset(*cfg.dataset_dir);
  }
  log_info("generating synthetic dataset with seed " + std::to_string(cfg.generator.seed));
  return generate_dataset(cfg.generator);
}

BandGrid grid_for(const ExperimentConfig& cfg, const EpochSet& data) {
  double epoch_length = static_cast<double>(data.epoch_samples) / data.sample_rate;
  return cfg.grid.build(epoch_length);
}

CrossvalOptions options_for(const ExperimentConfig& cfg, const BandGrid& grid) {
  CrossvalOptions opt;
  opt.grid = grid;
  opt.features = cfg.features;
  opt.arch = cfg.arch;
  opt.training = cfg.training;
  VariantFlags flags = variant_flags(cfg.variant);
  opt.gfe_enabled = flags.gfe;
  opt.dbda_enabled = flags.dbda;
  opt.jobs = cfg.jobs;
  return opt;
}

void write_snapshot(const ExperimentConfig& cfg, const fs::path& out_dir) {
  atomic_write_text(out_dir / "config_snapshot.json",
                    experiment_config_to_json(cfg).dump(2) + "\n");
}

nlohmann::ordered_json metrics_to_json(const MetricSet& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  if (m.sensitivity) {
    j["sensitivity"] = *m.sensitivity;
  } else {
    j["sensitivity"] = nullptr;
  }
  if (m.specificity) {
    j["specificity"] = *m.specificity;
  } else {
    j["specificity"] = nullptr;
  }
  j["acp"] = m.acp;
  j["refusals"] = m.refusals;
  j["subjects"] = m.subjects;
  return j;
}

std::string metrics_csv(const MetricSet& m) {
  std::ostringstream s;
  s << "accuracy,sensitivity,specificity,acp,refusals,subjects\n";
  s << fmt17(m.accuracy) << ",";
  if (m.sensitivity) s << fmt17(*m.sensitivity);
  s << ",";
  if (m.specificity) s << fmt17(*m.specificity);
  s << "," << fmt17(m.acp) << "," << m.refusals << "," << m.subjects << "\n";
  return s.str();
}

std::string metrics_line(const MetricSet& m) {
  std::ostringstream s;
  s << "Acc=" << fmt_pct(m.accuracy) << " ACP=" << fmt_pct(m.acp)
    << " Sen=" << fmt_pct(m.sensitivity) << " Spe=" << fmt_pct(m.specificity)
    << " refusals=" << m.refusals << "/" << m.subjects;
  return s.str();
}

nlohmann::ordered_json fold_seeds_json(const EpochSet& data, std::uint64_t master_seed) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (int sid : data.subject_ids()) {
    nlohmann::ordered_json row;
    row["subject"] = sid;
    row["seed"] = derive_seed(master_seed, {kStreamFold, static_cast<std::uint64_t>(sid)});
    out.push_back(row);
  }
  return out;
}

void log_fold_seeds(const EpochSet& data, std::uint64_t master_seed) {
  std::ostringstream s;
  s << "per-fold seeds (identical for every variant at master seed " << master_seed << "):";
  for (int sid : data.subject_ids()) {
    s << " " << sid << "="
      << derive_seed(master_seed, {kStreamFold, static_cast<std::uint64_t>(sid)});
  }
  log_info(s.str());
}

int cmd_generate(const ExperimentConfig& cfg) {
  fs::path out = cfg.output_dir;
  fs::create_directories(out);
  EpochSet data = generate_dataset(cfg.generator);
  fs::path dataset_dir = out / "dataset";
  fs::create_directories(dataset_dir);
  save_dataset(data, dataset_dir);
  write_snapshot(cfg, out);
  std::cout << data.subject_ids().size() << " subjects, " << data.epochs.size() << " epochs\n";
  log_info("dataset written to " + dataset_dir.string());
  return 0;
}

int cmd_features(const ExperimentConfig& cfg) {
  fs::path out = cfg.output_dir;
  fs::create_directories(out);
  EpochSet data = obtain_dataset(cfg);
  cfg.features.validate(data.sample_rate);
  BandGrid grid = grid_for(cfg, data);

  FoldFeatures ff = build_fold_features(data.epochs, {}, grid, cfg.features);
  std::size_t d = cfg.features.n_components * grid.cells();

  std::ostringstream rows;
  rows << "sample_id,subject_id,group,epoch_index";
  for (std::size_t i = 0; i < d; ++i) rows << ",f" << i;
  rows << "\n";
  for (std::size_t i = 0; i < ff.train.size(); ++i) {
    const FeatureSample& s = ff.train[i];
    rows << i << "," << s.subject_id << "," << s.group << "," << s.epoch_index;
    for (double v : s.values.data) rows << "," << fmt17(v);
    rows << "\n";
  }
  atomic_write_text(out / "features.csv", rows.str());
  write_snapshot(cfg, out);
  std::cout << "wrote " << ff.train.size() << " feature rows (" << d << " values each) to "
            << (out / "features.csv").string() << "\n";
  return 0;
}

void write_fold_artifacts(const fs::path& out, const FoldResult& fold) {
  std::string stem = "fold_" + std::to_string(fold.subject_id);
  fs::path log_path = out / (stem + "_training.csv");
  fs::path tmp = log_path;
  tmp += ".tmp";
  write_training_log_csv(fold.training_log, tmp);
  fs::rename(tmp, log_path);

  std::ostringstream rows;
  rows << "epoch_index,prediction,p_hc,p_amci\n";
  for (std::size_t i = 0; i < fold.predictions.size(); ++i) {
    rows << fold.epoch_indices[i] << "," << fold.predictions[i] << ","
         << fmt17(fold.probabilities(i, 0)) << "," << fmt17(fold.probabilities(i, 1)) << "\n";
  }
  atomic_write_text(out / (stem + "_predictions.csv"), rows.str());
  log_info(stem + ": verdict " + verdict_name(fold.diagnosis.verdict) + ", confidence " +
           fmt17(fold.diagnosis.confidence));
}

nlohmann::ordered_json subjects_json(const ExperimentResult& result) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const FoldResult& f : result.folds) {
    nlohmann::ordered_json row;
    row["subject_id"] = f.diagnosis.subject_id;
    row["true_group"] = f.diagnosis.true_group;
    row["verdict"] = verdict_name(f.diagnosis.verdict);
    row["confidence"] = f.diagnosis.confidence;
    row["sample_count"] = f.diagnosis.sample_count;
    out.push_back(row);
  }
  return out;
}

int cmd_crossval(const ExperimentConfig& cfg) {
  fs::path out = cfg.output_dir;
  fs::create_directories(out);
  EpochSet data = obtain_dataset(cfg);
  BandGrid grid = grid_for(cfg, data);
  CrossvalOptions opt = options_for(cfg, grid);
  opt.on_fold = [&out](const FoldResult& fold) { write_fold_artifacts(out, fold); };

  log_fold_seeds(data, cfg.training.seed);
  ExperimentResult result = loso_cross_validate(data, opt);

  nlohmann::ordered_json j;
  j["variant"] = cfg.variant;
  j["seed"] = cfg.seed;
  j["metrics"] = metrics_to_json(result.metrics);
  j["fold_seeds"] = fold_seeds_json(data, cfg.training.seed);
  j["subjects"] = subjects_json(result);
  atomic_write_text(out / "results.json", j.dump(2) + "\n");
  atomic_write_text(out / "metrics.csv", metrics_csv(result.metrics));
  write_snapshot(cfg, out);
  std::cout << metrics_line(result.metrics) << "\n";
  return 0;
}

int cmd_ablation(const ExperimentConfig& cfg, std::size_t n_seeds) {
  fs::path out = cfg.output_dir;
  fs::create_directories(out);

  std::ostringstream table;
  table << "variant,gfe,dbda,seed,accuracy,sensitivity,specificity,acp,refusals,subjects\n";
  nlohmann::ordered_json seeds_json = nlohmann::ordered_json::array();
  std::map<std::string, std::vector<const MetricSet*>> by_variant;
  std::vector<std::vector<AblationRow>> all_rows;
  all_rows.reserve(n_seeds);

  for (std::size_t i = 0; i < n_seeds; ++i) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + i;
    run_cfg.generator.seed = run_cfg.seed;
    run_cfg.training.seed = run_cfg.seed;

    EpochSet data = obtain_dataset(run_cfg);
    BandGrid grid = grid_for(run_cfg, data);
    CrossvalOptions opt = options_for(run_cfg, grid);
    log_fold_seeds(data, run_cfg.seed);
    all_rows.push_back(run_ablation(data, opt));

    nlohmann::ordered_json seed_entry;
    seed_entry["seed"] = run_cfg.seed;
    seed_entry["fold_seeds"] = fold_seeds_json(data, run_cfg.seed);
    nlohmann::ordered_json variant_rows = nlohmann::ordered_json::array();
    for (const AblationRow& row : all_rows.back()) {
      table << row.variant << "," << (row.gfe ? 1 : 0) << "," << (row.dbda ? 1 : 0) << ","
            << run_cfg.seed << "," << fmt17(row.result.metrics.accuracy) << ",";
      if (row.result.metrics.sensitivity) table << fmt17(*row.result.metrics.sensitivity);
      table << ",";
      if (row.result.metrics.specificity) table << fmt17(*row.result.metrics.specificity);
      table << "," << fmt17(row.result.metrics.acp) << "," << row.result.metrics.refusals << ","
            << row.result.metrics.subjects << "\n";

      nlohmann::ordered_json vr;
      vr["variant"] = row.variant;
      vr["gfe"] = row.gfe;
      vr["dbda"] = row.dbda;
      vr["metrics"] = metrics_to_json(row.result.metrics);
      variant_rows.push_back(vr);
      by_variant[row.variant].push_back(&row.result.metrics);
    }
    seed_entry["rows"] = variant_rows;
    seeds_json.push_back(seed_entry);
  }

  // Per-variant mean and sample standard deviation over master seeds,
  // in percentage points.
  auto mean_sd = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    if (xs.size() > 1) {
      for (double x : xs) var += (x - mean) * (x - mean);
      var /= static_cast<double>(xs.size() - 1);
    }
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  std::ostringstream summary;
  summary << "variant,runs,accuracy_mean,accuracy_sd,acp_mean,acp_sd\n";
  nlohmann::ordered_json summary_json = nlohmann::ordered_json::array();
  for (const AblationVariant& v : ablation_variants()) {
    const std::vector<const MetricSet*>& runs = by_variant[v.name];
    std::vector<double> acc, acp;
    for (const MetricSet* m : runs) {
      acc.push_back(100.0 * m->accuracy);
      acp.push_back(100.0 * m->acp);
    }
    auto [acc_mean, acc_sd] = mean_sd(acc);
    auto [acp_mean, acp_sd] = mean_sd(acp);
    summary << v.name << "," << runs.size() << "," << fmt17(acc_mean) << "," << fmt17(acc_sd)
            << "," << fmt17(acp_mean) << "," << fmt17(acp_sd) << "\n";
    nlohmann::ordered_json row;
    row["variant"] = v.name;
    row["runs"] = runs.size();
    row["accuracy_mean"] = acc_mean;
    row["accuracy_sd"] = acc_sd;
    row["acp_mean"] = acp_mean;
    row["acp_sd"] = acp_sd;
    summary_json.push_back(row);

    std::ostringstream line;
    line << v.name << ": Acc=" << std::fixed << std::setprecision(2) << acc_mean << "% +/- "
         << acc_sd << ", ACP=" << acp_mean << "% +/- " << acp_sd << " (" << runs.size()
         << (runs.size() == 1 ? " seed)" : " seeds)");
    std::cout << line.str() << "\n";
  }

  atomic_write_text(out / "ablation.csv", table.str());
  atomic_write_text(out / "ablation_summary.csv", summary.str());
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["n_seeds"] = n_seeds;
  j["seeds"] = seeds_json;
  j["summary"] = summary_json;
  atomic_write_text(out / "results.json", j.dump(2) + "\n");
  write_snapshot(cfg, out);
  return 0;
}

int cmd_project(const ExperimentConfig& cfg) {
  fs::path out = cfg.output_dir;
  fs::create_directories(out);
  EpochSet data = obtain_dataset(cfg);
  cfg.features.validate(data.sample_rate);
  BandGrid grid = grid_for(cfg, data);

  std::vector<int> ids = data.subject_ids();
  int held_out = cfg.projection_subject >= 0 ? cfg.projection_subject : ids.front();
  log_info("training with subject " + std::to_string(held_out) + " as the unlabeled target");

  auto [source_set, target_set] = split_domains(data, held_out);
  FoldFeatures ff =
      build_fold_features(source_set.epochs, target_set.epochs, grid, cfg.features);

  ArchConfig arch = cfg.arch;
  arch.in_channels = cfg.features.n_components;
  arch.freq_bins = grid.frequency_bands.size();
  arch.time_bins = grid.time_bands.size();

  std::vector<const FeatureSample*> source_ptrs, target_ptrs;
  for (const FeatureSample& s : ff.train) source_ptrs.push_back(&s);
  for (const FeatureSample& s : ff.test) target_ptrs.push_back(&s);

  VariantFlags flags = variant_flags(cfg.variant);
  LossReport report;
  GfdannModel model =
      train_model(arch, flags.gfe, flags.dbda, cfg.training, source_ptrs, target_ptrs, &report);

  std::vector<const FeatureSample*> class_samples;
  for (const FeatureSample& s : ff.train) {
    if (s.group == cfg.projection_group) class_samples.push_back(&s);
  }
  std::vector<ProjectionRow> rows = project_branch_features(model, class_samples);

  fs::path csv = out / "projection.csv";
  fs::path tmp = csv;
  tmp += ".tmp";
  write_projection_csv(rows, tmp);
  fs::rename(tmp, csv);

  fs::path log_path = out / "training.csv";
  tmp = log_path;
  tmp += ".tmp";
  write_training_log_csv(report, tmp);
  fs::rename(tmp, log_path);

  write_snapshot(cfg, out);
  std::cout << "wrote " << rows.size() << " projection rows for group " << cfg.projection_group
            << " to " << csv.string() << "\n";
  return 0;
}

}  // namespace
}  // namespace gfdann

int main(int argc, char** argv) {
  using namespace gfdann;

  CLI::App app{"EEG group-feature domain-adversarial toolkit"};
  app.require_subcommand(1);

  std::string config_path, variant_override, out_override;
  std::uint64_t seed_override = 0;
  std::size_t jobs_override = 1;
  std::size_t n_seeds = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config JSON file")->required();
    sub->add_option("--seed", seed_override, "master seed override");
    sub->add_option("--jobs", jobs_override, "parallel fold workers");
    sub->add_option("--variant", variant_override, "model variant")
        ->check(CLI::IsMember({"basenet1", "basenet2", "basenet3", "gfdann"}));
    sub->add_option("--out", out_override, "output directory override");
  };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic EEG dataset");
  CLI::App* features = app.add_subcommand("features", "extract shallow features for a dataset");
  CLI::App* crossval =
      app.add_subcommand("crossval", "leave-one-subject-out cross-validation");
  CLI::App* ablation = app.add_subcommand("ablation", "four-variant ablation table");
  CLI::App* project = app.add_subcommand("project", "2-D projection of branch features");
  for (CLI::App* sub : {generate, features, crossval, ablation, project}) add_common(sub);
  ablation->add_option("--seeds", n_seeds, "number of master seeds to average over")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (sub->count("--seed") > 0) {
      cfg.seed = seed_override;
      cfg.generator.seed = seed_override;
      cfg.training.seed = seed_override;
    }
    if (sub->count("--jobs") > 0) cfg.jobs = jobs_override;
    if (sub->count("--variant") > 0) cfg.variant = variant_override;
    if (sub->count("--out") > 0) cfg.output_dir = out_override;
    cfg.validate();

    if (sub == generate) return cmd_generate(cfg);
    if (sub == features) return cmd_features(cfg);
    if (sub == crossval) return cmd_crossval(cfg);
    if (sub == ablation) return cmd_ablation(cfg, n_seeds);
    return cmd_project(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
