// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_SEARCH_HPP
#define RLRS_SEARCH_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rlrs/config.hpp"
#include "rlrs/errors.hpp"
#include "rlrs/trainer.hpp"
#include "rlrs/util.hpp"

namespace rlrs {

enum class SearchMode { Rlrs, Baseline };

inline std::string_view mode_key(SearchMode m) { return m == SearchMode::Rlrs ? "rlrs" : "baseline"; }

/// Multiplicative factors tried on each entry, nearest first.
inline constexpr std::array<double, 4> kSearchFactors = {2.0 / 3.0, 3.0 / 2.0, 1.0 / 5.0, 5.0};

struct SearchEntry {
  std::string name;
  double value = 1.0;

  friend bool operator==(const SearchEntry&, const SearchEntry&) = default;
};

struct SearchSpace {
  SearchMode mode = SearchMode::Rlrs;
  std::vector<SearchEntry> entries;

  /// Cache key; shortest round-trip formatting keeps it exact.
  std::string key() const {
    std::string k;
    for (const auto& e : entries) k += e.name + "=" + format_double(e.value) + ";";
    return k;
  }

  double value(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e.value;
    throw ConfigError("no search entry named " + name);
  }

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

/// Search entries for a training config.
///
/// rlrs mode: rlrs.<tag>.start for each active tag, then rlrs.<tag>.end, then
/// optimizer.weight_decay and train.init_scale. baseline mode replaces the
/// relative rates with the absolute start and end LRs shared by all
/// components.
inline SearchSpace make_search_space(const TrainConfig& cfg, SearchMode mode) {
  SearchSpace s;
  s.mode = mode;
  const auto tags = active_tags(cfg.model.kind());
  if (mode == SearchMode::Rlrs) {
    for (auto t : tags) s.entries.push_back({"rlrs." + std::string(tag_key(t)) + ".start", cfg.rates.at(t).start});
    for (auto t : tags) s.entries.push_back({"rlrs." + std::string(tag_key(t)) + ".end", cfg.rates.at(t).end});
  } else {
    const auto& r = cfg.rates.at(tags.front());
    s.entries.push_back({"schedule.eta_start", cfg.schedule.eta_base * r.start});
    s.entries.push_back({"schedule.eta_end", cfg.schedule.eta_base * cfg.schedule.alpha_end * r.end});
  }
  s.entries.push_back({"optimizer.weight_decay", cfg.weight_decay});
  s.entries.push_back({"train.init_scale", cfg.init_scale});
  return s;
}

/// `cfg` with the values of `point` written in. Baseline points set the same
/// lambda on every component so that each one follows the given absolute
/// start and end LRs.
inline TrainConfig apply_search_point(TrainConfig cfg, const SearchSpace& point) {
  for (const auto& e : point.entries) {
    if (e.name == "optimizer.weight_decay") {
      cfg.weight_decay = e.value;
    } else if (e.name == "train.init_scale") {
      cfg.init_scale = e.value;
    } else if (e.name == "schedule.eta_start") {
      for (auto& [tag, r] : cfg.rates.per_component) r.start = e.value / cfg.schedule.eta_base;
    } else if (e.name == "schedule.eta_end") {
      for (auto& [tag, r] : cfg.rates.per_component)
        r.end = e.value / (cfg.schedule.eta_base * cfg.schedule.alpha_end);
    } else if (e.name.rfind("rlrs.", 0) == 0) {
      const auto parts = split(e.name, '.');
      const auto tag = parts.size() == 3 ? parse_tag(parts[1]) : std::nullopt;
      if (!tag || !cfg.rates.contains(*tag) || (parts[2] != "start" && parts[2] != "end"))
        throw ConfigError("search entry " + e.name + " does not name an active component");
      auto& r = cfg.rates.per_component[*tag];
      (parts[2] == "start" ? r.start : r.end) = e.value;
    } else {
      throw ConfigError("unknown search entry " + e.name);
    }
  }
  return cfg;
}

struct Evaluation {
  double objective = std::numeric_limits<double>::infinity();
  std::vector<RunLog> logs;
};

using Evaluator = std::function<Evaluation(const SearchSpace&)>;

/// Objectives keyed by SearchSpace::key(). Safe for concurrent use.
class EvaluationCache {
 public:
  std::optional<double> find(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  void insert(const std::string& key, double objective) {
    std::lock_guard lock(mutex_);
    values_.emplace(key, objective);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return values_.size();
  }

  /// Adds every evaluation of a JSONL audit trail.
  void load_trail(const std::string& jsonl) {
    std::istringstream in(jsonl);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const double obj = j.at("objective").is_null() ? std::numeric_limits<double>::infinity()
                                                      : j.at("objective").get<double>();
      insert(j.at("key").get<std::string>(), obj);
    }
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, double> values_;
};

struct AuditRecord {
  std::size_t index = 0;      // position in the trail
  std::size_t sweep = 0;
  std::string changed_entry;  // entry being varied; empty for the start point
  double factor = 1.0;
  SearchSpace point;
  double objective = 0.0;
  bool accepted = false;
  bool cached = false;
  std::string error;  // set when the evaluation failed
};

inline nlohmann::ordered_json audit_json(const AuditRecord& r) {
  nlohmann::ordered_json j;
  j["index"] = r.index;
  j["sweep"] = r.sweep;
  j["entry"] = r.changed_entry;
  j["factor"] = r.factor;
  auto cfg = nlohmann::ordered_json::object();
  for (const auto& e : r.point.entries) cfg[e.name] = e.value;
  j["configuration"] = cfg;
  j["key"] = r.point.key();
  j["objective"] = std::isfinite(r.objective) ? nlohmann::ordered_json(r.objective) : nlohmann::ordered_json(nullptr);
  j["accepted"] = r.accepted;
  j["cached"] = r.cached;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline std::string audit_jsonl(const std::vector<AuditRecord>& trail) {
  std::string s;
  for (const auto& r : trail) s += audit_json(r).dump() + "\n";
  return s;
}

struct SearchResult {
  SearchSpace best;
  double best_objective = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;  // fresh evaluations, the budgeted quantity
  std::size_t sweeps = 0;
  bool budget_exhausted = false;
  std::vector<AuditRecord> trail;
};

/// Greedy coordinate-wise multiplicative search.
///
/// Each sweep visits the entries in order and tries value * f for f in
/// kSearchFactors, taking the first strict improvement. Sweeps repeat until
/// one completes without a change or `budget` fresh evaluations are spent.
/// A throwing evaluator scores +inf. With jobs > 1 the factor trials of one
/// entry are evaluated concurrently; acceptance still follows factor order,
/// so the trajectory matches the serial one, but the extra trials count
/// against the budget.
inline SearchResult local_search(const SearchSpace& start, const Evaluator& evaluate, std::size_t budget,
                                 EvaluationCache* cache = nullptr, std::size_t jobs = 1) {
  if (budget < 1) throw ConfigError("search budget must be at least 1");
  for (const auto& e : start.entries)
    if (!(e.value > 0) || !std::isfinite(e.value))
      throw ConfigError("search entry " + e.name + " must start positive and finite");
  EvaluationCache local;
  if (!cache) cache = &local;

  SearchResult result;
  struct Outcome {
    double objective;
    bool cached;
    std::string error;
  };
  auto run_one = [&](const SearchSpace& point) -> Outcome {
    if (auto hit = cache->find(point.key())) return {*hit, true, {}};
    Outcome o{std::numeric_limits<double>::infinity(), false, {}};
    try {
      const double obj = evaluate(point).objective;
      if (std::isfinite(obj)) o.objective = obj;
      else o.error = "non-finite objective";
    } catch (const std::exception& e) {
      o.error = e.what();
    }
    cache->insert(point.key(), o.objective);
    return o;
  };
  auto record = [&](const SearchSpace& point, const Outcome& o, const std::string& entry, double factor,
                    bool accepted) {
    result.trail.push_back(
        {result.trail.size(), result.sweeps, entry, factor, point, o.objective, accepted, o.cached, o.error});
    if (!o.cached) ++result.evaluations;
  };

  result.best = start;
  {
    const Outcome o = run_one(start);
    record(start, o, "", 1.0, true);
    result.best_objective = o.objective;
  }

  for (;;) {
    ++result.sweeps;
    bool changed = false;
    for (std::size_t i = 0; i < result.best.entries.size(); ++i) {
      std::vector<SearchSpace> candidates;
      for (double f : kSearchFactors) {
        SearchSpace c = result.best;
        c.entries[i].value *= f;
        candidates.push_back(std::move(c));
      }
      // Concurrent prefetch of the uncached trials, within budget.
      std::map<std::size_t, Outcome> prefetched;
      if (jobs > 1) {
        std::vector<std::size_t> fresh;
        for (std::size_t k = 0; k < candidates.size(); ++k)
          if (!cache->find(candidates[k].key()) && result.evaluations + fresh.size() < budget) fresh.push_back(k);
        std::vector<Outcome> outcomes(fresh.size());
        detail::parallel_for(fresh.size(), jobs, [&](std::size_t j) { outcomes[j] = run_one(candidates[fresh[j]]); });
        for (std::size_t j = 0; j < fresh.size(); ++j) prefetched[fresh[j]] = outcomes[j];
      }
      for (std::size_t k = 0; k < candidates.size(); ++k) {
        const auto pre = prefetched.find(k);
        const bool known = pre != prefetched.end() || cache->find(candidates[k].key()).has_value();
        if (!known && result.evaluations >= budget) {
          result.budget_exhausted = true;
          return result;
        }
        const Outcome o = pre != prefetched.end() ? pre->second : run_one(candidates[k]);
        const bool better = o.objective < result.best_objective;
        record(candidates[k], o, candidates[k].entries[i].name, kSearchFactors[k], better);
        if (better) {
          for (const auto& [idx, unused] : prefetched)
            if (idx > k) ++result.evaluations;  // speculative trials still cost budget
          result.best = candidates[k];
          result.best_objective = o.objective;
          changed = true;
          break;
        }
      }
    }
    if (!changed) return result;
  }
}

struct BaseLrTrial {
  double eta_base;
  double objective;
  std::string error;
};

struct BaseLrResult {
  double eta_base = 0.0;
  double objective = 0.0;
  std::vector<BaseLrTrial> trials;  // ascending LR
};

/// Grid {1, 2, 5} x 10^-n for every n in `exponents`, ascending.
inline std::vector<double> base_lr_grid(const std::vector<int>& exponents) {
  std::vector<double> grid;
  for (int n : exponents)
    for (const char* m : {"1", "2", "5"}) grid.push_back(std::stod(std::string(m) + "e-" + std::to_string(n)));
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

/// Evaluates every grid point and keeps the lowest objective; ties go to
/// the smaller LR. Throwing evaluations count as +inf.
inline BaseLrResult tune_base_lr(const std::vector<int>& exponents, const std::function<double(double)>& evaluate,
                                 std::size_t jobs = 1) {
  const auto grid = base_lr_grid(exponents);
  if (grid.empty()) throw ConfigError("base LR grid is empty");
  BaseLrResult r;
  r.trials.resize(grid.size());
  detail::parallel_for(grid.size(), jobs, [&](std::size_t i) {
    BaseLrTrial t{grid[i], std::numeric_limits<double>::infinity(), {}};
    try {
      const double obj = evaluate(grid[i]);
      if (std::isfinite(obj)) t.objective = obj;
      else t.error = "non-finite objective";
    } catch (const std::exception& e) {
      t.error = e.what();
    }
    r.trials[i] = std::move(t);
  });
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < r.trials.size(); ++i)
    if (std::isfinite(r.trials[i].objective) && (!best || r.trials[i].objective < r.trials[*best].objective)) best = i;
  if (!best) throw NumericError("every base learning rate in the grid diverged");
  r.eta_base = r.trials[*best].eta_base;
  r.objective = r.trials[*best].objective;
  return r;
}

/// Large-model config carrying the small model's relative rates verbatim.
/// The base LR is left for tune_base_lr on the large model.
inline TrainConfig transfer(const TrainConfig& small, const TrainConfig& large) {
  const ModelKind ks = small.model.kind(), kl = large.model.kind();
  if (ks != kl)
    throw ConfigError("cannot transfer relative rates from a " + std::string(kind_key(ks)) + " model to a " +
                      std::string(kind_key(kl)) + " model");
  small.rates.validate(kl);
  TrainConfig out = large;
  out.rates = small.rates;
  out.provenance["source_run"] = small.run_id;
  out.provenance["source_eta_base"] = format_double(small.schedule.eta_base);
  out.provenance["source_model"] = "d_model=" + std::to_string(small.model.d_model) +
                                   ",n_layers=" + std::to_string(small.model.n_layers) +
                                   ",n_experts=" + std::to_string(small.model.n_experts);
  return out;
}

/// Objective = mean final-checkpoint loss over `seeds` (used as data seeds).
inline Evaluator trainer_evaluator(TrainConfig base, std::vector<std::uint64_t> seeds, Runner runner = train,
                                   std::size_t jobs = 1) {
  if (seeds.empty()) throw ConfigError("evaluation needs at least one seed");
  return [base = std::move(base), seeds = std::move(seeds), runner = std::move(runner), jobs](const SearchSpace& p) {
    const TrainConfig cfg = apply_search_point(base, p);
    Evaluation ev;
    ev.logs.resize(seeds.size());
    detail::parallel_for(seeds.size(), jobs, [&](std::size_t i) {
      TrainConfig c = cfg;
      c.data_seed = seeds[i];
      c.run_id = cfg.run_id + ".seed" + std::to_string(seeds[i]);
      ev.logs[i] = runner(c);
    });
    double total = 0.0;
    for (const auto& l : ev.logs) total += l.curve.final_loss();
    ev.objective = total / static_cast<double>(seeds.size());
    return ev;
  };
}

}  // namespace rlrs

#endif  // RLRS_SEARCH_HPP
