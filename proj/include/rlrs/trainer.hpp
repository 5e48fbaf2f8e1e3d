// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_TRAINER_HPP
#define RLRS_TRAINER_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rlrs/checkpoint.hpp"
#include "rlrs/config.hpp"
#include "rlrs/data.hpp"
#include "rlrs/errors.hpp"
#include "rlrs/losses.hpp"
#include "rlrs/metrics.hpp"
#include "rlrs/model.hpp"
#include "rlrs/optimizer.hpp"
#include "rlrs/schedule.hpp"

namespace rlrs {

/// A run stopped on a non-finite loss or gradient. Carries everything
/// recorded up to that point.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, RunLog partial) : Error(what), log_(std::move(partial)) {}
  const RunLog& log() const { return log_; }

 private:
  RunLog log_;
};

inline TokenStream load_stream(const DataSpec& data) {
  return data.path.empty() ? synthetic_corpus(data.synthetic) : read_byte_file(data.path);
}

struct CheckpointEvent {
  std::size_t percent;
  std::size_t step;
  double loss;
};

struct TrainOptions {
  std::function<void(const CheckpointEvent&)> on_checkpoint;
  const TokenStream* stream = nullptr;  // reuse an already loaded corpus
};

struct TrainResult {
  RunLog log;
  ParameterSet params;
  AdamWState optimizer;
};

namespace detail {

inline std::string norms_text(const std::vector<ComponentTag>& tags, const std::map<ComponentTag, double>& norms) {
  std::string s;
  for (auto t : tags) {
    if (!s.empty()) s += ", ";
    auto it = norms.find(t);
    s += std::string(tag_key(t)) + "=" + (it == norms.end() ? std::string("n/a") : format_double(it->second));
  }
  return s;
}

}  // namespace detail

/// Trains one model and returns the final weights, optimizer state and log.
///
/// Checkpoint p records the mean cross-entropy of the steps since checkpoint
/// p-1, the per-component learning rates at that step and the L2 norm of each
/// component's pre-LR update at that step.
inline TrainResult train_full(const TrainConfig& cfg, const TrainOptions& options = {}) {
  cfg.validate();
  const auto clock_start = std::chrono::steady_clock::now();
  TokenStream owned;
  const TokenStream* stream = options.stream;
  if (!stream) {
    owned = load_stream(cfg.data);
    stream = &owned;
  }
  BatchIterator batches(*stream, cfg.batch_size, cfg.model.seq_len, cfg.data_seed);

  TrainResult out;
  out.params = init_model(cfg.model, cfg.init_scale, cfg.init_seed);
  auto& params = out.params;
  auto& opt = out.optimizer;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.epsilon = cfg.epsilon;
  opt.weight_decay = cfg.weight_decay;
  opt.decay_exclude = cfg.decay_exclude;
  opt.reset(params);

  RunLog& log = out.log;
  const ModelKind kind = cfg.model.kind();
  const FlatConfig echo = train_config_to_flat(cfg);
  log.run_id = cfg.run_id;
  log.kind = kind;
  log.config = echo.entries();
  log.init_seed = cfg.init_seed;
  log.data_seed = cfg.data_seed;
  log.curve.total_steps = cfg.schedule.total_steps;
  log.tags = active_tags(kind);
  for (auto t : log.tags) {
    log.lr_trace[t];
    log.update_norm_trace[t];
  }

  const std::size_t T = cfg.schedule.total_steps;
  std::size_t next_percent = 0;
  double window_sum = 0.0;
  std::size_t window_count = 0;
  std::map<ComponentTag, double> last_norms;
  std::vector<Tensor> grads(params.size());

  auto fail = [&](std::size_t step, const std::string& why) -> DivergenceError {
    log.diverged = true;
    log.diagnostic = "step " + std::to_string(step) + ": " + why + "; last update norms: " +
                     detail::norms_text(log.tags, last_norms);
    return DivergenceError(cfg.run_id + " diverged at " + log.diagnostic, log);
  };

  for (std::size_t step = 1; step <= T; ++step) {
    const Batch batch = batches.next();
    Tape tape;
    double ce = 0.0;
    try {
      const ForwardResult fwd = forward(tape, params, cfg.model, batch.inputs);
      const ModelLoss loss = model_loss(fwd, batch.targets, cfg.loss, cfg.model.n_experts);
      ce = loss.cross_entropy.value()[0];
      if (!std::isfinite(loss.total.value()[0])) throw NumericError("non-finite loss");
      tape.backward(loss.total);
      for (std::size_t i = 0; i < params.size(); ++i) grads[i] = tape.grad(fwd.parameters[i]);
    } catch (const NumericError& e) {
      throw fail(step, e.what());
    }
    if (cfg.grad_clip > 0) clip_global_norm(grads, cfg.grad_clip);

    LrByTag lrs;
    for (auto t : log.tags) lrs[t] = lr_at(cfg.schedule, cfg.rates, t, step);
    std::vector<Tensor> updates;
    try {
      updates = adamw_step(opt, params, grads, lrs);
    } catch (const NumericError& e) {
      throw fail(step, e.what());
    }
    for (auto t : log.tags) last_norms[t] = update_magnitude(params, updates, t);
    log.steps_completed = step;

    window_sum += ce;
    window_count += 1;
    while (next_percent < kCheckpoints && checkpoint_step(next_percent, T) == step) {
      const double sample = window_count > 0 ? window_sum / static_cast<double>(window_count) : ce;
      window_sum = 0.0;
      window_count = 0;
      log.curve.samples.push_back(sample);
      for (auto t : log.tags) {
        log.lr_trace[t].push_back(lrs[t]);
        log.update_norm_trace[t].push_back(last_norms[t]);
      }
      log.wall_clock_seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count());
      if (options.on_checkpoint) options.on_checkpoint({next_percent, step, sample});
      ++next_percent;
    }

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      const std::filesystem::path dir = cfg.checkpoint_dir.empty() ? "." : cfg.checkpoint_dir;
      std::error_code ec;
      std::filesystem::create_directories(dir, ec);
      save_checkpoint(dir / (cfg.run_id + ".step" + std::to_string(step) + ".ckpt"),
                      make_checkpoint(echo.to_text(), cfg.init_seed, step, params, &opt));
    }
  }
  return out;
}

inline RunLog train(const TrainConfig& cfg) { return train_full(cfg).log; }

using Runner = std::function<RunLog(const TrainConfig&)>;

namespace detail {

/// Calls fn(0..n-1) on up to `jobs` threads. The first exception thrown by
/// the lowest index is rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w)
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    for (auto& w : workers) w.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

struct CompareReport {
  std::vector<std::uint64_t> seeds;
  std::vector<RunLog> base_runs;
  std::vector<RunLog> rlrs_runs;
  LossCurve base_mean;
  LossCurve rlrs_mean;
  Speedup result;
  TrainConfig base_config;
  TrainConfig rlrs_config;
};

/// Checks that two configs differ only in relative rates, the base LR,
/// run ids and provenance.
inline void require_comparable(const TrainConfig& base, const TrainConfig& rlrs) {
  TrainConfig a = base, b = rlrs;
  for (auto* c : {&a, &b}) {
    c->rates = RelativeRates::identity(c->model.kind());
    c->schedule.eta_base = 1.0;
    c->run_id = "run";
    c->provenance.clear();
    c->data_seed = 0;
  }
  if (a == b) return;
  const auto fa = train_config_to_flat(a), fb = train_config_to_flat(b);
  for (const auto& [k, v] : fa.entries()) {
    const auto other = fb.get(k);
    if (!other || *other != v)
      throw ConfigError("compared configs differ in " + k + " (" + v + " vs " + other.value_or("<unset>") + ")");
  }
  throw ConfigError("compared configs differ outside relative rates and schedule.eta_base");
}

/// Trains both arms once per data seed, averages each arm's curves and
/// measures the speedup of the RLRS arm over the base arm.
inline CompareReport compare(const TrainConfig& base, const TrainConfig& rlrs, const std::vector<std::uint64_t>& seeds,
                             const Runner& runner = train, std::size_t jobs = 1) {
  if (seeds.empty()) throw ConfigError("compare needs at least one seed");
  require_comparable(base, rlrs);
  CompareReport report;
  report.seeds = seeds;
  report.base_config = base;
  report.rlrs_config = rlrs;
  std::vector<TrainConfig> runs;
  for (const auto* arm : {&base, &rlrs}) {
    const std::string prefix = arm == &base ? "base" : "rlrs";
    for (auto seed : seeds) {
      TrainConfig c = *arm;
      c.data_seed = seed;
      c.run_id = prefix + ".seed" + std::to_string(seed);
      runs.push_back(std::move(c));
    }
  }
  std::vector<RunLog> logs(runs.size());
  detail::parallel_for(runs.size(), jobs, [&](std::size_t i) { logs[i] = runner(runs[i]); });
  report.base_runs.assign(logs.begin(), logs.begin() + static_cast<std::ptrdiff_t>(seeds.size()));
  report.rlrs_runs.assign(logs.begin() + static_cast<std::ptrdiff_t>(seeds.size()), logs.end());
  std::vector<LossCurve> bc, rc;
  for (const auto& l : report.base_runs) bc.push_back(l.curve);
  for (const auto& l : report.rlrs_runs) rc.push_back(l.curve);
  report.base_mean = mean_curve(bc);
  report.rlrs_mean = mean_curve(rc);
  report.result = speedup(report.base_mean, report.rlrs_mean);
  return report;
}

inline std::size_t parameter_count(const ModelConfig& model) { return init_model(model, 1.0, 0).element_count(); }

inline std::size_t train_tokens(const TrainConfig& c) {
  return c.schedule.total_steps * c.batch_size * c.model.seq_len;
}

/// Summary in the shape of a results-table row per arm, plus the per-seed
/// and mean curves behind it.
inline nlohmann::ordered_json report_json(const CompareReport& r) {
  using json = nlohmann::ordered_json;
  auto curve_json = [](const LossCurve& c) {
    json j = json::array();
    for (double x : c.samples) j.push_back(x);
    return j;
  };
  auto arm = [&](const char* lr_type, const TrainConfig& cfg, const std::vector<RunLog>& runs, const LossCurve& mean,
                 bool with_speedup) {
    json row;
    row["type"] = std::string(kind_key(cfg.model.kind()));
    row["lr_type"] = lr_type;
    row["base_lr"] = cfg.schedule.eta_base;
    row["train_tokens"] = train_tokens(cfg);
    row["total_params"] = parameter_count(cfg.model);
    if (with_speedup) {
      row["speedup"] = r.result.reached ? json(r.result.percent) : json(nullptr);
    } else {
      row["speedup"] = "-";
    }
    row["final_loss"] = mean.final_loss();
    json per_seed = json::array();
    for (std::size_t i = 0; i < runs.size(); ++i)
      per_seed.push_back({{"seed", r.seeds[i]}, {"run_id", runs[i].run_id}, {"curve", curve_json(runs[i].curve)}});
    row["runs"] = per_seed;
    row["mean_curve"] = curve_json(mean);
    return row;
  };
  json j;
  j["seeds"] = r.seeds;
  j["rows"] = json::array({arm("baseline", r.base_config, r.base_runs, r.base_mean, false),
                           arm("relative", r.rlrs_config, r.rlrs_runs, r.rlrs_mean, true)});
  j["speedup"] = {{"reached", r.result.reached},
                  {"percent", r.result.reached ? json(r.result.percent) : json(nullptr)},
                  {"target_loss", r.result.target_loss},
                  {"t_base", r.result.t_base},
                  {"t_relative", r.result.reached ? json(r.result.t_relative) : json(nullptr)}};
  return j;
}

}  // namespace rlrs

#endif  // RLRS_TRAINER_HPP
