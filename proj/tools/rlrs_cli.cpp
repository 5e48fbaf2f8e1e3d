// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

// rlrs: train, tune, compare, extrapolate, ablate, presets.
//
// Exit codes: 0 success, 1 configuration error, 2 divergence, 3 I/O error.
// RLRS_LOG sets the log level (trace, debug, info, warn, error, off).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rlrs/rlrs.hpp"

namespace fs = std::filesystem;
using rlrs::TrainConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitIo = 3;

TrainConfig load_config(const std::string& path) {
  return rlrs::train_config_from_flat(rlrs::FlatConfig::load(path));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : rlrs::split(text, ',')) {
    std::uint64_t v;
    if (!rlrs::parse_uint(rlrs::trim(s), v)) throw rlrs::ConfigError("--seeds: '" + s + "' is not a seed");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw rlrs::ConfigError("--seeds is empty");
  return seeds;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  for (const auto& s : rlrs::split(text, ',')) {
    double v;
    if (!rlrs::parse_double(rlrs::trim(s), v)) throw rlrs::ConfigError("--values: '" + s + "' is not a number");
    values.push_back(v);
  }
  if (values.empty()) throw rlrs::ConfigError("--values is empty");
  return values;
}

// "2..4" -> {2, 3, 4}; "3" -> {3}
std::vector<int> parse_grid(const std::string& text) {
  const auto dots = text.find("..");
  std::uint64_t lo, hi;
  const bool ok = dots == std::string::npos
                      ? rlrs::parse_uint(text, lo) && rlrs::parse_uint(text, hi)
                      : rlrs::parse_uint(text.substr(0, dots), lo) && rlrs::parse_uint(text.substr(dots + 2), hi);
  if (!ok || lo > hi || hi > 12) throw rlrs::ConfigError("--grid: expected n1..n2 with 0 <= n1 <= n2 <= 12");
  std::vector<int> out;
  for (auto n = lo; n <= hi; ++n) out.push_back(static_cast<int>(n));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text) || (out.close(), !out)) throw rlrs::IoError("cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

rlrs::RunLog logged_train(const TrainConfig& cfg) {
  spdlog::info("{}: training {} steps", cfg.run_id, cfg.schedule.total_steps);
  rlrs::TrainOptions opts;
  opts.on_checkpoint = [&](const rlrs::CheckpointEvent& e) {
    if (e.percent % 10 == 0) spdlog::debug("{}: {}% step {} loss {:.4f}", cfg.run_id, e.percent, e.step, e.loss);
  };
  auto log = rlrs::train_full(cfg, opts).log;
  spdlog::info("{}: final loss {:.4f}", cfg.run_id, log.curve.final_loss());
  return log;
}

// Runner that also exports each run's curve and meta files under `dir`.
rlrs::Runner exporting_runner(const fs::path& dir) {
  return [dir](const TrainConfig& cfg) {
    try {
      auto log = logged_train(cfg);
      rlrs::export_run(log, dir);
      return log;
    } catch (const rlrs::DivergenceError& e) {
      rlrs::export_run(e.log(), dir);
      throw;
    }
  };
}

nlohmann::ordered_json speedup_json(const rlrs::Speedup& s) {
  nlohmann::ordered_json j;
  j["reached"] = s.reached;
  j["percent"] = s.reached ? nlohmann::ordered_json(s.percent) : nlohmann::ordered_json(nullptr);
  j["target_loss"] = s.target_loss;
  j["t_base"] = s.t_base;
  j["t_relative"] = s.reached ? nlohmann::ordered_json(s.t_relative) : nlohmann::ordered_json(nullptr);
  return j;
}

// ---- train -------------------------------------------------------------

struct TrainArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed, data_seed;
  bool timing = false;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = load_config(a.config);
  if (a.seed) cfg.init_seed = *a.seed;
  if (a.data_seed) cfg.data_seed = *a.data_seed;
  try {
    const auto log = logged_train(cfg);
    const auto paths = rlrs::export_run(log, a.out, a.timing);
    std::cout << paths.curve.string() << "\n" << paths.meta.string() << "\n";
    return kExitOk;
  } catch (const rlrs::DivergenceError& e) {
    rlrs::export_run(e.log(), a.out, a.timing);
    throw;
  }
}

// ---- tune --------------------------------------------------------------

struct TuneArgs {
  std::string config, mode = "rlrs", out, seeds, resume;
  std::size_t budget = 60;
  std::size_t jobs = 1;
};

int run_tune(const TuneArgs& a) {
  const TrainConfig cfg = load_config(a.config);
  const auto mode = a.mode == "rlrs" ? rlrs::SearchMode::Rlrs : rlrs::SearchMode::Baseline;
  const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{cfg.data_seed} : parse_seeds(a.seeds);
  rlrs::EvaluationCache cache;
  if (!a.resume.empty()) {
    std::ifstream in(a.resume);
    if (!in) throw rlrs::IoError("cannot read audit trail " + a.resume);
    std::stringstream ss;
    ss << in.rdbuf();
    cache.load_trail(ss.str());
    spdlog::info("loaded {} cached evaluations", cache.size());
  }
  TrainConfig base = cfg;
  base.run_id = "tune";
  const auto evaluate = rlrs::trainer_evaluator(base, seeds, logged_train, 1);
  const auto result = rlrs::local_search(rlrs::make_search_space(cfg, mode), evaluate, a.budget, &cache, a.jobs);

  TrainConfig best = rlrs::apply_search_point(cfg, result.best);
  best.provenance["tuned_by"] = "local_search";
  best.provenance["tune_mode"] = std::string(rlrs::mode_key(mode));
  best.provenance["tune_objective"] = rlrs::format_double(result.best_objective);
  const fs::path out(a.out);
  write_text(out / "best.cfg", rlrs::train_config_to_flat(best).to_text());
  write_text(out / "audit.jsonl", rlrs::audit_jsonl(result.trail));
  nlohmann::ordered_json summary;
  summary["mode"] = std::string(rlrs::mode_key(mode));
  summary["seeds"] = seeds;
  summary["best_objective"] = result.best_objective;
  auto best_point = nlohmann::ordered_json::object();
  for (const auto& e : result.best.entries) best_point[e.name] = e.value;
  summary["best"] = best_point;
  summary["evaluations"] = result.evaluations;
  summary["sweeps"] = result.sweeps;
  summary["budget_exhausted"] = result.budget_exhausted;
  write_json(out / "tune.json", summary);
  std::cout << (out / "best.cfg").string() << "\n";
  return kExitOk;
}

// ---- compare -----------------------------------------------------------

struct CompareArgs {
  std::string base, rlrs, seeds = "0,1,2", out;
  std::size_t jobs = 1;
};

int run_compare(const CompareArgs& a) {
  const TrainConfig base = load_config(a.base), rel = load_config(a.rlrs);
  const fs::path out(a.out);
  const auto report = rlrs::compare(base, rel, parse_seeds(a.seeds), exporting_runner(out / "runs"), a.jobs);
  write_json(out / "report.json", rlrs::report_json(report));
  if (report.result.reached)
    spdlog::info("speedup {:.2f}%", report.result.percent);
  else
    spdlog::info("relative arm never reached the baseline's final loss");
  std::cout << (out / "report.json").string() << "\n";
  return kExitOk;
}

// ---- extrapolate -------------------------------------------------------

struct ExtrapolateArgs {
  std::string small, large, grid = "2..4", seeds = "0,1,2", out;
  std::size_t jobs = 1;
};

int run_extrapolate(const ExtrapolateArgs& a) {
  const TrainConfig small = load_config(a.small);
  const TrainConfig large = load_config(a.large);
  const auto exponents = parse_grid(a.grid);
  const auto seeds = parse_seeds(a.seeds);
  const fs::path out(a.out);

  TrainConfig relative = rlrs::transfer(small, large);
  relative.run_id = "relative";
  TrainConfig baseline = large;
  baseline.rates = rlrs::RelativeRates::identity(large.model.kind());
  baseline.run_id = "baseline";

  auto tune_arm = [&](TrainConfig arm) {
    auto objective = [&arm, &seeds](double eta) {
      TrainConfig c = arm;
      c.schedule.eta_base = eta;
      c.run_id = arm.run_id + ".eta" + rlrs::format_double(eta);
      return rlrs::trainer_evaluator(c, seeds, logged_train)(rlrs::SearchSpace{}).objective;
    };
    return rlrs::tune_base_lr(exponents, objective, a.jobs);
  };
  const auto rel_lr = tune_arm(relative);
  const auto base_lr = tune_arm(baseline);
  relative.schedule.eta_base = rel_lr.eta_base;
  baseline.schedule.eta_base = base_lr.eta_base;
  write_text(out / "transferred.cfg", rlrs::train_config_to_flat(relative).to_text());

  auto trials_json = [](const rlrs::BaseLrResult& r) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& t : r.trials) {
      nlohmann::ordered_json j;
      j["eta_base"] = t.eta_base;
      j["objective"] = std::isfinite(t.objective) ? nlohmann::ordered_json(t.objective) : nlohmann::ordered_json(nullptr);
      if (!t.error.empty()) j["error"] = t.error;
      arr.push_back(j);
    }
    return nlohmann::ordered_json{{"eta_base", r.eta_base}, {"objective", r.objective}, {"trials", arr}};
  };
  write_json(out / "lr_tuning.json", {{"grid_exponents", exponents},
                                      {"relative", trials_json(rel_lr)},
                                      {"baseline", trials_json(base_lr)}});

  const auto report = rlrs::compare(baseline, relative, seeds, exporting_runner(out / "runs"), a.jobs);
  auto j = rlrs::report_json(report);
  j["speedup_detail"] = speedup_json(report.result);
  write_json(out / "report.json", j);
  std::cout << (out / "report.json").string() << "\n";
  return kExitOk;
}

// ---- ablate ------------------------------------------------------------

struct AblateArgs {
  std::string config, component, which = "start", values, seeds, out;
  std::size_t jobs = 1;
};

int run_ablate(const AblateArgs& a) {
  const TrainConfig cfg = load_config(a.config);
  const auto tag = rlrs::parse_tag(a.component);
  if (!tag || !cfg.rates.contains(*tag))
    throw rlrs::ConfigError("--component: '" + a.component + "' is not a component of this model");
  const auto values = parse_values(a.values);
  const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{cfg.data_seed} : parse_seeds(a.seeds);
  const fs::path out(a.out);

  std::vector<TrainConfig> runs;
  for (double v : values)
    for (auto s : seeds) {
      TrainConfig c = cfg;
      auto& r = c.rates.per_component[*tag];
      (a.which == "start" ? r.start : r.end) = v;
      c.data_seed = s;
      c.run_id = "ablate." + a.component + "." + a.which + "." + rlrs::format_double(v) + ".seed" + std::to_string(s);
      c.validate();
      runs.push_back(std::move(c));
    }
  std::vector<rlrs::RunLog> logs(runs.size());
  const auto runner = exporting_runner(out / "runs");
  rlrs::detail::parallel_for(runs.size(), a.jobs, [&](std::size_t i) { logs[i] = runner(runs[i]); });

  nlohmann::ordered_json j;
  j["component"] = a.component;
  j["which"] = a.which;
  j["seeds"] = seeds;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    auto losses = nlohmann::ordered_json::array();
    double total = 0.0;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const double l = logs[vi * seeds.size() + si].curve.final_loss();
      losses.push_back(l);
      total += l;
    }
    rows.push_back({{"value", values[vi]},
                    {"final_losses", losses},
                    {"mean_final_loss", total / static_cast<double>(seeds.size())}});
  }
  j["values"] = rows;
  write_json(out / "ablation.json", j);
  std::cout << (out / "ablation.json").string() << "\n";
  return kExitOk;
}

// ---- presets -----------------------------------------------------------

int run_presets(const std::string& kind) {
  const auto pk = kind == "moe" ? rlrs::PresetKind::Moe : rlrs::PresetKind::Dense;
  std::cout << "# relative rates, " << kind << " preset\n";
  std::cout << "schedule.alpha_end = " << (pk == rlrs::PresetKind::Moe ? "0.04" : "0.06") << "\n";
  std::cout << rlrs::rates_to_text(rlrs::preset(pk));
  return kExitOk;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const rlrs::DivergenceError& e) {
    spdlog::error("{}", e.what());
    return kExitDiverged;
  } catch (const rlrs::NumericError& e) {
    spdlog::error("{}", e.what());
    return kExitDiverged;
  } catch (const rlrs::IoError& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const rlrs::Error& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("malformed JSON: {}", e.what());
    return kExitIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("rlrs");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S %l] %v");
  if (const char* level = std::getenv("RLRS_LOG")) spdlog::cfg::helpers::load_levels(level);

  CLI::App app{"Per-component learning rate schedule lab"};
  app.require_subcommand(1, 1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train one model and write its curve and meta files");
  train_cmd->add_option("--config", train.config, "Config file")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--seed", train.seed, "Override train.init_seed");
  train_cmd->add_option("--data-seed", train.data_seed, "Override train.data_seed");
  train_cmd->add_flag("--timing", train.timing, "Also write wall-clock seconds per checkpoint");

  TuneArgs tune;
  auto* tune_cmd = app.add_subcommand("tune", "Local search over relative rates, weight decay and init scale");
  tune_cmd->add_option("--config", tune.config, "Starting config")->required();
  tune_cmd->add_option("--mode", tune.mode, "Search space")->check(CLI::IsMember({"rlrs", "baseline"}));
  tune_cmd->add_option("--budget", tune.budget, "Maximum fresh evaluations")->check(CLI::PositiveNumber);
  tune_cmd->add_option("--out", tune.out, "Output directory")->required();
  tune_cmd->add_option("--seeds", tune.seeds, "Data seeds averaged per evaluation, e.g. 0,1,2");
  tune_cmd->add_option("--resume", tune.resume, "Audit trail whose evaluations are reused");
  tune_cmd->add_option("--jobs", tune.jobs, "Concurrent evaluations")->check(CLI::PositiveNumber);

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Speedup of a relative-rate config over a baseline");
  cmp_cmd->add_option("--base", cmp.base, "Baseline config")->required();
  cmp_cmd->add_option("--rlrs", cmp.rlrs, "Relative-rate config")->required();
  cmp_cmd->add_option("--seeds", cmp.seeds, "Data seeds, e.g. 0,1,2");
  cmp_cmd->add_option("--out", cmp.out, "Output directory")->required();
  cmp_cmd->add_option("--jobs", cmp.jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  ExtrapolateArgs ext;
  auto* ext_cmd = app.add_subcommand("extrapolate", "Reuse small-model relative rates on a large model");
  ext_cmd->add_option("--small-result", ext.small, "Tuned small-model config")->required();
  ext_cmd->add_option("--large-config", ext.large, "Large-model config")->required();
  ext_cmd->add_option("--grid", ext.grid, "Base LR exponents n1..n2 for {1,2,5}e-n");
  ext_cmd->add_option("--seeds", ext.seeds, "Data seeds, e.g. 0,1,2");
  ext_cmd->add_option("--out", ext.out, "Output directory")->required();
  ext_cmd->add_option("--jobs", ext.jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  AblateArgs abl;
  auto* abl_cmd = app.add_subcommand("ablate", "Vary one component's relative rate, others fixed");
  abl_cmd->add_option("--config", abl.config, "Config file")->required();
  abl_cmd->add_option("--component", abl.component, "Component tag, e.g. experts")->required();
  abl_cmd->add_option("--which", abl.which, "Endpoint to vary")->check(CLI::IsMember({"start", "end"}));
  abl_cmd->add_option("--values", abl.values, "Comma-separated values")->required();
  abl_cmd->add_option("--seeds", abl.seeds, "Data seeds, e.g. 0,1,2");
  abl_cmd->add_option("--out", abl.out, "Output directory")->required();
  abl_cmd->add_option("--jobs", abl.jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  std::string preset_kind;
  auto* pre_cmd = app.add_subcommand("presets", "Print a shipped relative-rate table as config text");
  pre_cmd->add_option("--kind", preset_kind, "moe or dense")->required()->check(CLI::IsMember({"moe", "dense"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (*train_cmd) return guarded([&] { return run_train(train); });
  if (*tune_cmd) return guarded([&] { return run_tune(tune); });
  if (*cmp_cmd) return guarded([&] { return run_compare(cmp); });
  if (*ext_cmd) return guarded([&] { return run_extrapolate(ext); });
  if (*abl_cmd) return guarded([&] { return run_ablate(abl); });
  return guarded([&] { return run_presets(preset_kind); });
}
