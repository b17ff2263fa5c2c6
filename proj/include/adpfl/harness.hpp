// Copyright 2026 The adpfl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "adpfl/config.hpp"
#include "adpfl/csv.hpp"
#include "adpfl/federation.hpp"

namespace adpfl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAllDiverged = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitIoError = 3;

// Statistics over one set of repeated runs. Diverged runs are excluded
// from every aggregate; across-sample ("patient") statistics come from the
// best run, the one with the highest best-model test Dice.
struct RunStats {
  int ok_runs = 0;
  int diverged_runs = 0;
  int best_run = -1;
  MeanStd runs_best;
  MeanStd runs_latest;
  MeanStd patients_best;
  MeanStd patients_latest;
};

struct RepeatSet {
  ExperimentConfig cfg;
  std::vector<ExperimentResult> results;
  RunStats stats;
};

inline RunStats summarize_results(const std::vector<ExperimentResult>& results,
                                  bool sample_std) {
  RunStats stats;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  stats.runs_best = {nan, nan};
  stats.runs_latest = {nan, nan};
  stats.patients_best = {nan, nan};
  stats.patients_latest = {nan, nan};
  std::vector<double> best;
  std::vector<double> latest;
  for (size_t r = 0; r < results.size(); ++r) {
    if (results[r].status != RunStatus::kOk) {
      ++stats.diverged_runs;
      continue;
    }
    ++stats.ok_runs;
    best.push_back(results[r].test_best.mean);
    latest.push_back(results[r].test_latest.mean);
    if (stats.best_run < 0 ||
        results[r].test_best.mean > results[stats.best_run].test_best.mean) {
      stats.best_run = static_cast<int>(r);
    }
  }
  if (stats.ok_runs > 0) {
    stats.runs_best = summarize_runs(best, sample_std);
    stats.runs_latest = summarize_runs(latest, sample_std);
    stats.patients_best = {results[stats.best_run].test_best.mean,
                           results[stats.best_run].test_best.stddev};
    stats.patients_latest = {results[stats.best_run].test_latest.mean,
                             results[stats.best_run].test_latest.stddev};
  }
  return stats;
}

// R repeats with seeds seed, seed+1, ..., seed+R-1. Divergence is reported
// on err and recorded, never thrown.
inline RepeatSet run_repeats(const ExperimentConfig& cfg, std::ostream& err) {
  RepeatSet set;
  set.cfg = cfg;
  for (int r = 0; r < cfg.repeats; ++r) {
    ExperimentResult result = run_experiment(cfg, cfg.seed + r);
    if (result.status == RunStatus::kDiverged) {
      err << "warning: run " << r << " (seed " << cfg.seed + r
          << ", mode " << to_string(cfg.privacy.mode) << ") diverged at round "
          << result.diverged_round << "\n";
    }
    set.results.push_back(std::move(result));
  }
  set.stats = summarize_results(set.results, cfg.sample_std);
  return set;
}

namespace detail {

inline std::string checksum_hex(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string status_name(RunStatus s) {
  return s == RunStatus::kOk ? "ok" : "diverged";
}

inline std::filesystem::path ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir);
  return dir;
}

inline void write_config_resolved(const std::filesystem::path& dir,
                                  const ExperimentConfig& cfg) {
  std::ofstream out(dir / "config_resolved", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "config_resolved").string());
  out << cfg.resolved_text();
  out.flush();
  if (!out) throw IoError("write failed for config_resolved");
}

}  // namespace detail

// rounds.csv: one row per completed round per run, with the learning rate,
// the validation Dice, and every client's sanitization trace.
inline void write_rounds_csv(const std::filesystem::path& path,
                             const RepeatSet& set) {
  CsvFile csv(path);
  std::vector<std::string> header = {"run", "round", "lr", "mean_val_dice",
                                     "best_val_dice"};
  const int K = static_cast<int>(set.cfg.client_sizes.size());
  for (int k = 0; k < K; ++k) {
    const std::string c = "c" + std::to_string(k) + "_";
    for (const char* field :
         {"val_dice", "loss", "pre_norm", "post_norm", "gamma", "clip_factor",
          "noise_b", "degenerate"}) {
      header.push_back(c + field);
    }
  }
  csv.row(header);
  for (size_t r = 0; r < set.results.size(); ++r) {
    for (const RoundRecord& rec : set.results[r].rounds) {
      std::vector<std::string> row = {
          csv_num(static_cast<int>(r)), csv_num(rec.round), csv_num(rec.lr),
          csv_num(rec.mean_val_dice), csv_num(rec.best_val_dice)};
      for (const ClientRoundStats& c : rec.clients) {
        row.push_back(csv_num(c.val_dice));
        row.push_back(csv_num(c.local_loss));
        row.push_back(csv_num(c.trace.pre_clip_norm));
        row.push_back(csv_num(c.trace.post_clip_norm));
        row.push_back(csv_num(c.trace.gamma));
        row.push_back(csv_num(c.trace.clip_factor));
        row.push_back(csv_num(c.trace.noise_scale_b));
        row.push_back(c.trace.degenerate ? "1" : "0");
      }
      csv.row(row);
    }
  }
  csv.close();
}

// summary.csv: one row per run plus across-run and across-sample aggregates.
inline void write_summary_csv(const std::filesystem::path& path,
                              const RepeatSet& set) {
  CsvFile csv(path);
  csv.row({"record", "run", "status", "test_dice_best", "test_dice_latest"});
  for (size_t r = 0; r < set.results.size(); ++r) {
    const ExperimentResult& result = set.results[r];
    const bool ok = result.status == RunStatus::kOk;
    csv.row({"run", csv_num(static_cast<int>(r)),
             detail::status_name(result.status),
             ok ? csv_num(result.test_best.mean) : "nan",
             ok ? csv_num(result.test_latest.mean) : "nan"});
  }
  const RunStats& s = set.stats;
  csv.row({"runs_mean", "", "", csv_num(s.runs_best.mean),
           csv_num(s.runs_latest.mean)});
  csv.row({"runs_std", "", "", csv_num(s.runs_best.stddev),
           csv_num(s.runs_latest.stddev)});
  csv.row({"patients_mean", "", "", csv_num(s.patients_best.mean),
           csv_num(s.patients_latest.mean)});
  csv.row({"patients_std", "", "", csv_num(s.patients_best.stddev),
           csv_num(s.patients_latest.stddev)});
  csv.close();
}

inline int cmd_run(const ExperimentConfig& cfg, std::ostream& out,
                   std::ostream& err) {
  const auto dir = detail::ensure_out_dir(cfg.out_dir);
  detail::write_config_resolved(dir, cfg);
  const RepeatSet set = run_repeats(cfg, err);
  write_rounds_csv(dir / "rounds.csv", set);
  write_summary_csv(dir / "summary.csv", set);
  out << "mode " << to_string(cfg.privacy.mode) << ": test dice (best model) "
      << csv_num(set.stats.runs_best.mean) << " +/- "
      << csv_num(set.stats.runs_best.stddev) << " over " << set.stats.ok_runs
      << "/" << cfg.repeats << " runs\n";
  return set.stats.ok_runs == 0 ? kExitAllDiverged : kExitOk;
}

// The three-method comparison: identical data and model initialization per
// run seed, privacy mode swapped between none / static / adaptive.
struct CompareOutput {
  std::array<RepeatSet, 3> by_mode;  // none, static, adaptive

  const RepeatSet& np_fl() const { return by_mode[0]; }
  const RepeatSet& dp_fl() const { return by_mode[1]; }
  const RepeatSet& adp_fl() const { return by_mode[2]; }
};

inline const std::array<std::pair<PrivacyMode, const char*>, 3>&
compare_methods() {
  static const std::array<std::pair<PrivacyMode, const char*>, 3> methods = {
      {{PrivacyMode::kNone, "np_fl"},
       {PrivacyMode::kStatic, "dp_fl"},
       {PrivacyMode::kAdaptive, "adp_fl"}}};
  return methods;
}

inline CompareOutput run_compare_experiments(const ExperimentConfig& cfg,
                                             std::ostream& err) {
  CompareOutput output;
  for (size_t m = 0; m < compare_methods().size(); ++m) {
    ExperimentConfig mode_cfg = cfg;
    mode_cfg.privacy.mode = compare_methods()[m].first;
    output.by_mode[m] = run_repeats(mode_cfg, err);
  }
  return output;
}

inline void write_compare_csvs(const std::filesystem::path& dir,
                               const CompareOutput& output) {
  CsvFile csv(dir / "compare.csv");
  csv.row({"method", "run", "seed", "init_checksum", "status",
           "static_threshold", "test_dice_best", "test_dice_latest"});
  for (size_t m = 0; m < compare_methods().size(); ++m) {
    const RepeatSet& set = output.by_mode[m];
    for (size_t r = 0; r < set.results.size(); ++r) {
      const ExperimentResult& result = set.results[r];
      const bool ok = result.status == RunStatus::kOk;
      csv.row({compare_methods()[m].second, csv_num(static_cast<int>(r)),
               csv_num(result.run_seed),
               detail::checksum_hex(result.init_checksum),
               detail::status_name(result.status),
               csv_num(result.static_threshold),
               ok ? csv_num(result.test_best.mean) : "nan",
               ok ? csv_num(result.test_latest.mean) : "nan"});
    }
  }
  csv.close();

  CsvFile summary(dir / "compare_summary.csv");
  summary.row({"method", "runs_mean", "runs_std", "patients_mean",
               "patients_std", "diverged_runs"});
  for (size_t m = 0; m < compare_methods().size(); ++m) {
    const RunStats& s = output.by_mode[m].stats;
    summary.row({compare_methods()[m].second, csv_num(s.runs_best.mean),
                 csv_num(s.runs_best.stddev), csv_num(s.patients_best.mean),
                 csv_num(s.patients_best.stddev), csv_num(s.diverged_runs)});
  }
  summary.close();

  static const std::array<const char*, 3> round_files = {
      "rounds_none.csv", "rounds_static.csv", "rounds_adaptive.csv"};
  for (size_t m = 0; m < round_files.size(); ++m) {
    write_rounds_csv(dir / round_files[m], output.by_mode[m]);
  }
}

inline int cmd_compare(const ExperimentConfig& cfg, std::ostream& out,
                       std::ostream& err) {
  const auto dir = detail::ensure_out_dir(cfg.out_dir);
  detail::write_config_resolved(dir, cfg);
  const CompareOutput output = run_compare_experiments(cfg, err);
  write_compare_csvs(dir, output);

  int ok_total = 0;
  for (size_t m = 0; m < compare_methods().size(); ++m) {
    const RunStats& s = output.by_mode[m].stats;
    ok_total += s.ok_runs;
    out << compare_methods()[m].second << ": "
        << csv_num(s.runs_best.mean) << " +/- "
        << csv_num(s.runs_best.stddev) << "\n";
  }
  return ok_total == 0 ? kExitAllDiverged : kExitOk;
}

struct SweepOutput {
  std::vector<std::pair<double, RepeatSet>> by_percentile;
};

inline SweepOutput run_sweep_experiments(const ExperimentConfig& cfg,
                                         std::ostream& err) {
  SweepOutput output;
  for (double p : cfg.sweep_percentiles) {
    ExperimentConfig p_cfg = cfg;
    p_cfg.privacy.mode = PrivacyMode::kAdaptive;
    p_cfg.privacy.p = p;
    output.by_percentile.emplace_back(p, run_repeats(p_cfg, err));
  }
  return output;
}

// sweep.csv mirrors a sensitivity table: one column per percentile, rows
// for the across-run and across-sample statistics of the best model.
inline void write_sweep_csv(const std::filesystem::path& dir,
                            const SweepOutput& output) {
  CsvFile csv(dir / "sweep.csv");
  std::vector<std::string> header = {"metric"};
  for (const auto& [p, set] : output.by_percentile) {
    header.push_back("p" + detail::format_double(p));
  }
  csv.row(header);
  const auto stat_row = [&](const char* name, auto select) {
    std::vector<std::string> row = {name};
    for (const auto& [p, set] : output.by_percentile) {
      row.push_back(select(set.stats));
    }
    csv.row(row);
  };
  stat_row("runs_mean", [](const RunStats& s) { return csv_num(s.runs_best.mean); });
  stat_row("runs_std",
           [](const RunStats& s) { return csv_num(s.runs_best.stddev); });
  stat_row("patients_mean",
           [](const RunStats& s) { return csv_num(s.patients_best.mean); });
  stat_row("patients_std",
           [](const RunStats& s) { return csv_num(s.patients_best.stddev); });
  stat_row("diverged_runs",
           [](const RunStats& s) { return csv_num(s.diverged_runs); });
  csv.close();
}

inline int cmd_sweep(const ExperimentConfig& cfg, std::ostream& out,
                     std::ostream& err) {
  const auto dir = detail::ensure_out_dir(cfg.out_dir);
  detail::write_config_resolved(dir, cfg);
  const SweepOutput output = run_sweep_experiments(cfg, err);
  write_sweep_csv(dir, output);

  int ok_total = 0;
  for (const auto& [p, set] : output.by_percentile) {
    ok_total += set.stats.ok_runs;
    out << "p=" << detail::format_double(p) << ": "
        << csv_num(set.stats.runs_best.mean) << " +/- "
        << csv_num(set.stats.runs_best.stddev) << "\n";
  }
  return ok_total == 0 ? kExitAllDiverged : kExitOk;
}

inline int cmd_export(const ExperimentConfig& cfg, std::ostream& out,
                      std::ostream& /*err*/) {
  const auto dir = detail::ensure_out_dir(cfg.out_dir);
  detail::write_config_resolved(dir, cfg);
  const Federation fed =
      build_federation(cfg.seed, cfg.client_sizes, cfg.test_samples,
                       cfg.heterogeneity, cfg.image_size);
  export_federation(fed, dir / "dataset");
  int total = static_cast<int>(fed.test.size());
  for (const ClientSite& site : fed.sites) {
    total += static_cast<int>(site.train.size() + site.val.size());
  }
  out << "exported " << total << " samples to "
      << (dir / "dataset").string() << "\n";
  return kExitOk;
}

inline void print_usage(std::ostream& os) {
  os << "usage: adpfl <command> [config-file] [--key value ...]\n"
        "\n"
        "commands:\n"
        "  run          train under the configured privacy mode; writes\n"
        "               rounds.csv, summary.csv and config_resolved\n"
        "  compare      run np_fl/dp_fl/adp_fl on identical data and model\n"
        "               initialization; writes compare.csv and per-mode\n"
        "               rounds files\n"
        "  sweep        run the adaptive mode for every percentile in\n"
        "               sweep.percentiles; writes sweep.csv\n"
        "  export-data  write the generated federation as flat binary\n"
        "               grids plus a manifest\n"
        "  help         show this message\n"
        "\n"
        "Flags mirror config keys, e.g. --rounds 50 --privacy.mode static.\n"
        "The ADPFED_OUT environment variable overrides the output "
        "directory.\n";
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out,
                    std::ostream& err) {
  try {
    if (args.empty()) {
      print_usage(err);
      return kExitConfigError;
    }
    const std::string& command = args[0];
    if (command == "help" || command == "--help" || command == "-h") {
      print_usage(out);
      return kExitOk;
    }

    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
    for (size_t i = 1; i < args.size(); ++i) {
      const std::string& token = args[i];
      if (token.rfind("--", 0) == 0) {
        const size_t eq = token.find('=');
        if (eq != std::string::npos) {
          overrides.emplace_back(token.substr(2, eq - 2),
                                 token.substr(eq + 1));
        } else {
          if (i + 1 >= args.size()) {
            throw ConfigError("missing value for flag " + token);
          }
          overrides.emplace_back(token.substr(2), args[++i]);
        }
      } else if (config_path.empty()) {
        config_path = token;
      } else {
        throw ConfigError("unexpected argument '" + token + "'");
      }
    }

    ExperimentConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& [key, value] : overrides) cfg.apply(key, value);
    if (const char* env_out = std::getenv("ADPFED_OUT")) {
      if (*env_out != '\0') cfg.out_dir = env_out;
    }
    cfg.validate();

    if (command == "run") return cmd_run(cfg, out, err);
    if (command == "compare") return cmd_compare(cfg, out, err);
    if (command == "sweep") return cmd_sweep(cfg, out, err);
    if (command == "export-data") return cmd_export(cfg, out, err);
    err << "unknown command '" << command << "'\n";
    print_usage(err);
    return kExitConfigError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIoError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIoError;
  }
}

}  // namespace adpfl
