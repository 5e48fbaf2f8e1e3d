// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_METRICS_HPP
#define RLRS_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rlrs/errors.hpp"
#include "rlrs/schedule.hpp"
#include "rlrs/util.hpp"

namespace rlrs {

/// Checkpoints per run: every whole percent from 0 to 100.
inline constexpr std::size_t kCheckpoints = 101;

/// Training step recorded at `percent`. Steps are 1-based, so percent 0
/// maps to the first step (the loss of the untrained model).
inline std::size_t checkpoint_step(std::size_t percent, std::size_t total_steps) {
  return std::max<std::size_t>(1, percent * total_steps / 100);
}

/// Loss at each whole percent of a run.
struct LossCurve {
  std::size_t total_steps = 0;
  std::vector<double> samples;

  bool complete() const {
    if (samples.size() != kCheckpoints) return false;
    return std::all_of(samples.begin(), samples.end(), [](double x) { return std::isfinite(x); });
  }

  double final_loss() const {
    if (samples.empty()) throw DomainError("empty loss curve");
    return samples.back();
  }

  friend bool operator==(const LossCurve&, const LossCurve&) = default;
};

/// Pointwise mean of curves over the same number of steps.
inline LossCurve mean_curve(std::span<const LossCurve> curves) {
  if (curves.empty()) throw DomainError("mean_curve of zero curves");
  LossCurve out{curves.front().total_steps, std::vector<double>(curves.front().samples.size(), 0.0)};
  for (const auto& c : curves) {
    if (c.total_steps != out.total_steps || c.samples.size() != out.samples.size())
      throw DomainError("mean_curve: curves differ in length or total steps");
    for (std::size_t i = 0; i < c.samples.size(); ++i) out.samples[i] += c.samples[i];
  }
  for (auto& x : out.samples) x /= static_cast<double>(curves.size());
  return out;
}

struct Speedup {
  bool reached = false;    // false: the RLRS curve never reached the target loss
  double percent = 0.0;    // (t_base / t_relative - 1) * 100 when reached
  double target_loss = 0.0;
  std::size_t t_base = 0;
  std::size_t t_relative = 0;
};

namespace detail {

inline std::optional<std::size_t> first_crossing(const LossCurve& c, double target) {
  for (std::size_t p = 0; p < c.samples.size(); ++p)
    if (c.samples[p] <= target) return checkpoint_step(p, c.total_steps);
  return std::nullopt;
}

}  // namespace detail

/// Steps-to-target speedup of `rlrs` over `base`.
///
/// The target is base's final-checkpoint loss. t_relative is the first
/// checkpoint step where `rlrs` is at or below the target; t_base is the
/// same crossing measured on `base`, which is its last step whenever the
/// final checkpoint is the first to reach that level (the usual case).
inline Speedup speedup(const LossCurve& base, const LossCurve& rlrs) {
  if (!base.complete() || !rlrs.complete()) throw DomainError("speedup needs two complete loss curves");
  Speedup s;
  s.target_loss = base.final_loss();
  s.t_base = *detail::first_crossing(base, s.target_loss);
  const auto rel = detail::first_crossing(rlrs, s.target_loss);
  if (!rel) return s;
  s.reached = true;
  s.t_relative = *rel;
  s.percent = (static_cast<double>(s.t_base) / static_cast<double>(s.t_relative) - 1.0) * 100.0;
  return s;
}

/// Everything recorded by one training run, aligned on the checkpoints.
struct RunLog {
  std::string run_id = "run";
  ModelKind kind = ModelKind::Dense;
  std::vector<std::pair<std::string, std::string>> config;  // flat config echo
  std::uint64_t init_seed = 0;
  std::uint64_t data_seed = 0;
  LossCurve curve;  // fewer than kCheckpoints samples when the run diverged
  std::vector<ComponentTag> tags;
  std::map<ComponentTag, std::vector<double>> lr_trace;
  std::map<ComponentTag, std::vector<double>> update_norm_trace;
  std::vector<double> wall_clock_seconds;
  std::size_t steps_completed = 0;
  bool diverged = false;
  std::string diagnostic;

  std::size_t recorded() const { return curve.samples.size(); }
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace detail

inline std::string curve_csv(const RunLog& log) {
  std::string s = "percent,step,loss";
  for (auto t : log.tags) s += ",lr_" + std::string(tag_key(t));
  for (auto t : log.tags) s += ",updnorm_" + std::string(tag_key(t));
  s += "\n";
  for (std::size_t p = 0; p < log.recorded(); ++p) {
    s += std::to_string(p) + "," + std::to_string(checkpoint_step(p, log.curve.total_steps)) + "," +
         format_double(log.curve.samples[p]);
    for (auto t : log.tags) s += "," + format_double(log.lr_trace.at(t).at(p));
    for (auto t : log.tags) s += "," + format_double(log.update_norm_trace.at(t).at(p));
    s += "\n";
  }
  return s;
}

inline nlohmann::ordered_json meta_json(const RunLog& log) {
  nlohmann::ordered_json j;
  j["run_id"] = log.run_id;
  j["model_kind"] = std::string(kind_key(log.kind));
  j["seeds"] = {{"init", log.init_seed}, {"data", log.data_seed}};
  j["total_steps"] = log.curve.total_steps;
  j["steps_completed"] = log.steps_completed;
  j["checkpoints_recorded"] = log.recorded();
  j["diverged"] = log.diverged;
  if (!log.diagnostic.empty()) j["diagnostic"] = log.diagnostic;
  if (log.recorded() > 0) j["final_loss"] = log.curve.samples.back();
  auto tags = nlohmann::ordered_json::array();
  for (auto t : log.tags) tags.push_back(std::string(tag_key(t)));
  j["tags"] = tags;
  auto cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : log.config) cfg[k] = v;
  j["config"] = cfg;
  return j;
}

struct ExportPaths {
  std::filesystem::path curve;
  std::filesystem::path meta;
  std::filesystem::path timing;
};

/// Writes <run_id>.curve.csv and <run_id>.meta.json, both byte-stable for
/// identical logs. Wall-clock seconds vary between runs, so they go to a
/// separate <run_id>.timing.csv, written only on request.
inline ExportPaths export_run(const RunLog& log, const std::filesystem::path& dir, bool with_timing = false) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  ExportPaths paths{dir / (log.run_id + ".curve.csv"), dir / (log.run_id + ".meta.json"), {}};
  detail::write_file(paths.curve, curve_csv(log));
  detail::write_file(paths.meta, meta_json(log).dump(2) + "\n");
  if (!with_timing) return paths;
  paths.timing = dir / (log.run_id + ".timing.csv");
  std::string timing = "percent,step,wall_clock_seconds\n";
  for (std::size_t p = 0; p < log.wall_clock_seconds.size(); ++p)
    timing += std::to_string(p) + "," + std::to_string(checkpoint_step(p, log.curve.total_steps)) + "," +
              format_double(log.wall_clock_seconds[p]) + "\n";
  detail::write_file(paths.timing, timing);
  return paths;
}

}  // namespace rlrs

#endif  // RLRS_METRICS_HPP
