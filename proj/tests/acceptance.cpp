// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. One PASS/FAIL line per criterion; tolerances are the
// constants below.
//
//   acceptance [--only N[,M...]] [--strict]
//
// Exit status is 0 when every FAIL is a documented known failure (see
// Outcome::known) and 1 otherwise. --strict makes any FAIL fatal.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_cases.hpp"
#include "oracles.hpp"
#include "rlrs/rlrs.hpp"

using namespace rlrs;

namespace {

constexpr double kScheduleTol = 1e-12;
constexpr double kGradTol = 1e-4;
constexpr int kGradInstances = 20;
constexpr double kLossTol = 1e-12;
constexpr int kRandomDecisions = 1000;
constexpr std::size_t kSearchEvalLimit = 60;
constexpr int kSearchTargets = 40;

// Desk-scale run.
constexpr std::size_t kDeskSteps = 10000;
constexpr std::size_t kDeskTuneSteps = 2000;
const std::vector<std::uint64_t> kDeskSeeds{0, 1, 2};

struct Outcome {
  bool pass = true;
  std::string detail;
  bool known = false;  // failure matches a documented, analysed limitation
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

// ---- 1 ---------------------------------------------------------------------

Outcome schedule_closed_forms() {
  double worst = 0.0, worst_cont = 0.0;
  for (auto kind : {PresetKind::Moe, PresetKind::Dense}) {
    const auto rates = preset(kind);
    const auto model_kind = kind == PresetKind::Moe ? ModelKind::Moe : ModelKind::Dense;
    for (double warm : {0.0, 0.01, 0.1}) {
      ScheduleSpec s;
      s.eta_base = 3e-3;
      s.alpha_end = kind == PresetKind::Moe ? 0.04 : 0.06;
      s.warmup_fraction = warm;
      s.total_steps = 4000;
      const std::size_t w = s.warmup_steps(), span = s.total_steps - w;
      for (auto tag : active_tags(model_kind)) {
        const auto& r = rates.at(tag);
        for (int q = 0; q <= 4; ++q) {
          // span is a multiple of 4 for every warmup above.
          const std::size_t step = w + span * static_cast<std::size_t>(q) / 4;
          const double want = oracle::cosine_lr(s.eta_base, s.alpha_end, r.start, r.end, q / 4.0);
          worst = std::max(worst, std::abs(lr_at(s, rates, tag, step) - want) / want);
        }
        if (w > 0) {
          const double start = s.eta_base * r.start;
          const double line = start * static_cast<double>(w - 1) / static_cast<double>(w);
          // Warmup line extended to W meets the cosine's value at W.
          const double slope = lr_at(s, rates, tag, w - 1) - line;
          const double at_w = lr_at(s, rates, tag, w);
          worst_cont = std::max({worst_cont, std::abs(slope) / start, std::abs(at_w - start) / start});
        }
      }
    }
  }
  return {worst < kScheduleTol && worst_cont < kScheduleTol,
          "max rel err " + fmt(worst) + ", warmup boundary " + fmt(worst_cont) + " (tol " + fmt(kScheduleTol) + ")"};
}

// ---- 2 ---------------------------------------------------------------------

Outcome gradient_integrity() {
  double worst = 0.0;
  std::string worst_name;
  std::size_t primitives = 0;
  gradient_cases::for_each_primitive([&](const char* name, const gradient_cases::Make& make) {
    ++primitives;
    for (int i = 0; i < kGradInstances; ++i) {
      const double e = gradient_cases::check_primitive_instance(make, i).max_rel_error;
      if (e > worst) {
        worst = e;
        worst_name = name;
      }
    }
  });
  double moe_worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (int i = 0; i < kGradInstances; ++i) {
    const auto r = gradient_cases::moe_loss_check(i);
    moe_worst = std::max(moe_worst, r.max_rel_error);
    checked += r.checked;
    skipped += r.skipped;
  }
  // Coordinates whose perturbation flips a routing decision sit on a
  // discontinuity and are excluded; there must be few of them.
  const bool few_skips = skipped * 100 < checked;
  return {worst < kGradTol && moe_worst < kGradTol && few_skips,
          std::to_string(primitives) + " primitives x " + std::to_string(kGradInstances) + " max " + fmt(worst) + " (" +
              worst_name + "); 2-layer MoE loss max " + fmt(moe_worst) + " over " + std::to_string(checked) +
              " coords, " + std::to_string(skipped) + " routing-flip skips"};
}

// ---- 3 ---------------------------------------------------------------------

Outcome optimizer_oracle() {
  std::mt19937_64 rng(3);
  ParameterSet p;
  const std::vector<std::pair<ComponentTag, Shape>> layout{{ComponentTag::Embedding, {32, 8}},
                                                           {ComponentTag::Attention, {8, 24}},
                                                           {ComponentTag::Router, {8, 4}},
                                                           {ComponentTag::Experts, {4, 8, 16}},
                                                           {ComponentTag::Unembedding, {8, 32}}};
  for (std::size_t i = 0; i < layout.size(); ++i)
    p.add("p" + std::to_string(i), oracle::random_tensor(layout[i].second, rng), layout[i].first);
  std::vector<double> theta;
  for (const auto& x : p) theta.insert(theta.end(), x.tensor.data().begin(), x.tensor.data().end());
  AdamWState s;
  oracle::FlatAdamW flat{1e-3, 0.9, 0.999, 1e-8, 0.1, {}, {}, 0};
  LrByTag lrs;
  for (auto tag : active_tags(ModelKind::Moe)) lrs[tag] = 1e-3;
  for (int step = 0; step < 100; ++step) {
    std::vector<Tensor> g;
    std::vector<double> flat_g;
    for (const auto& x : p) {
      g.push_back(oracle::random_tensor(x.tensor.shape(), rng, 0.1));
      flat_g.insert(flat_g.end(), g.back().data().begin(), g.back().data().end());
    }
    adamw_step(s, p, g, lrs);
    flat.step(theta, flat_g);
  }
  std::size_t k = 0, mismatches = 0;
  for (const auto& x : p)
    for (double v : x.tensor.data()) mismatches += v != theta[k++];
  return {mismatches == 0 && k >= 1000,
          std::to_string(mismatches) + " of " + std::to_string(k) + " parameters differ bitwise after 100 steps"};
}

// ---- 4 ---------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  const std::size_t n = p.cols();
  for (std::size_t t = 0; t < p.rows(); ++t) {
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(logits[t * n + i]);
    for (std::size_t i = 0; i < n; ++i) p[t * n + i] = std::exp(logits[t * n + i]) / z;
  }
  return p;
}

std::vector<std::size_t> top1(const Tensor& p) {
  std::vector<std::size_t> c(p.rows(), 0);
  for (std::size_t t = 0; t < p.rows(); ++t)
    for (std::size_t i = 1; i < p.cols(); ++i)
      if (p[t * p.cols() + i] > p[t * p.cols() + c[t]]) c[t] = i;
  return c;
}

Outcome loss_formulas() {
  const double z = z_loss(Tensor({16, 8}, 0.0));
  const double ln8 = std::log(8.0);
  const double z_err = std::abs(z - ln8 * ln8);
  std::vector<std::size_t> uniform_choice(16);
  for (std::size_t t = 0; t < 16; ++t) uniform_choice[t] = t % 8;
  const double lb_err = std::abs(load_balance_loss(Tensor({16, 8}, 1.0 / 8.0), uniform_choice, 8) - 1.0);

  // Random router decisions as the router makes them: softmax of random
  // logits, top-1 by probability.
  std::mt19937_64 rng(2024);
  int soft_violations = 0, hard_violations = 0;
  double soft_min = std::numeric_limits<double>::infinity(), hard_min = soft_min;
  for (int trial = 0; trial < kRandomDecisions; ++trial) {
    const auto probs = softmax_rows(oracle::random_tensor({16, 8}, rng, 1.5));
    const auto chosen = top1(probs);
    const double lb = load_balance_loss(probs, chosen, 8);
    soft_min = std::min(soft_min, lb);
    soft_violations += lb < 1.0 - kLossTol;
    Tensor onehot({16, 8});
    for (std::size_t t = 0; t < 16; ++t) onehot[t * 8 + chosen[t]] = 1.0;
    const double hard = load_balance_loss(onehot, chosen, 8);
    hard_min = std::min(hard_min, hard);
    hard_violations += hard < 1.0 - kLossTol;
  }
  const bool exact = z_err < kLossTol && lb_err < kLossTol && hard_violations == 0;
  Outcome o;
  o.pass = exact && soft_violations == 0;
  o.detail = "z(0) err " + fmt(z_err) + ", lb(uniform) err " + fmt(lb_err) + "; lb >= 1 on " +
             std::to_string(kRandomDecisions) + " random decisions: " + std::to_string(soft_violations) +
             " violations (min " + fmt(soft_min) + "), one-hot probabilities: " + std::to_string(hard_violations) +
             " violations (min " + fmt(hard_min) + ")";
  // n * sum f_i P_i has no lower bound of 1 once P is soft; the exact parts
  // must still hold for the failure to count as the known one.
  o.known = exact && soft_violations > 0;
  return o;
}

// ---- 5 ---------------------------------------------------------------------

SearchSpace space2(double x, double y) {
  SearchSpace s;
  s.entries = {{"x", x}, {"y", y}};
  return s;
}

Outcome local_search_criterion() {
  std::mt19937_64 rng(1);
  std::size_t max_evals = 0, misses = 0;
  for (int trial = 0; trial < kSearchTargets; ++trial) {
    const int ax = static_cast<int>(rng() % 13) - 6, ay = static_cast<int>(rng() % 13) - 6;
    const double wx = 0.5 + static_cast<double>(rng() % 100) / 25.0, wy = 0.5 + static_cast<double>(rng() % 100) / 25.0;
    const double tx = std::pow(1.5, ax), ty = std::pow(1.5, ay);
    const auto f = [=](const std::vector<double>& v) {
      const double a = std::log(v[0] / tx), b = std::log(v[1] / ty);
      return wx * a * a + wy * b * b;
    };
    const auto r = local_search(
        space2(1.0, 1.0), [&](const SearchSpace& p) { return Evaluation{f({p.entries[0].value, p.entries[1].value}), {}}; },
        1000);
    max_evals = std::max(max_evals, r.evaluations);
    if (std::abs(r.best_objective - oracle::lattice_minimum({1.0, 1.0}, f)) > 1e-12) ++misses;
  }
  // Start already at the lattice optimum.
  const double tx = 2.25, ty = 1.0 / 1.5;
  std::size_t calls = 0;
  const auto r = local_search(
      space2(tx, ty),
      [&](const SearchSpace& p) {
        ++calls;
        const double a = std::log(p.entries[0].value / tx), b = std::log(p.entries[1].value / ty);
        return Evaluation{a * a + 2 * b * b, {}};
      },
      1000);
  const bool one_sweep = r.sweeps == 1 && r.best.entries[0].value == tx && r.best.entries[1].value == ty;
  return {misses == 0 && max_evals <= kSearchEvalLimit && one_sweep,
          std::to_string(kSearchTargets - static_cast<int>(misses)) + "/" + std::to_string(kSearchTargets) +
              " reached the brute-force lattice minimum, max " + std::to_string(max_evals) +
              " evaluations (limit " + std::to_string(kSearchEvalLimit) + "); optimal start: " +
              std::to_string(r.sweeps) + " sweep, " + std::to_string(calls) + " evaluations"};
}

// ---- 6 ---------------------------------------------------------------------

Outcome speedup_metric() {
  std::size_t outside = 0, cases = 0;
  for (std::size_t total : {1000u, 3000u, 10000u}) {
    for (double ratio : {1.1, 1.25, 1.5, 2.0, 3.7}) {
      const double tau_b = static_cast<double>(total) / 3.0, tau_r = tau_b / ratio;
      const auto base = oracle::sampled_curve(total, [&](double s) { return 2.0 + 3.0 * std::exp(-s / tau_b); });
      const auto rel = oracle::sampled_curve(total, [&](double s) { return 2.0 + 3.0 * std::exp(-s / tau_r); });
      const auto r = speedup(base, rel);
      // rel crosses base's final loss at exactly total / ratio.
      const double s_star = static_cast<double>(total) / ratio;
      const double quantum = static_cast<double>(total) / 100.0;
      const double t = static_cast<double>(r.t_relative);
      ++cases;
      if (!r.reached || t < s_star - 1e-9 || t > s_star + quantum) ++outside;
    }
  }
  std::mt19937_64 rng(5);
  double worst_self = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    LossCurve c{1000 + static_cast<std::size_t>(trial), {}};
    double l = 6.0;
    for (std::size_t p = 0; p < kCheckpoints; ++p)
      c.samples.push_back(l += std::uniform_real_distribution<double>(-0.08, 0.05)(rng));
    worst_self = std::max(worst_self, std::abs(speedup(c, c).percent));
  }
  return {outside == 0 && worst_self == 0.0,
          std::to_string(cases - outside) + "/" + std::to_string(cases) +
              " closed-form crossings within one 1% quantum; max |speedup(c, c)| = " + fmt(worst_self) +
              " over 100 random curves"};
}

// ---- 7, 8, 10 --------------------------------------------------------------

TrainConfig small_run(ModelKind kind) {
  TrainConfig c;
  c.model.d_model = 16;
  c.model.n_layers = 2;
  c.model.n_heads = 2;
  c.model.n_experts = kind == ModelKind::Moe ? 4 : 0;
  c.model.vocab_size = 32;
  c.model.seq_len = 8;
  c.data.synthetic.vocab_size = 32;
  c.data.synthetic.length = 20000;
  c.schedule.eta_base = 3e-3;
  c.schedule.alpha_end = kind == ModelKind::Moe ? 0.04 : 0.06;
  c.schedule.total_steps = 150;
  c.schedule.warmup_fraction = 0.05;
  c.rates = preset(kind == ModelKind::Moe ? PresetKind::Moe : PresetKind::Dense);
  c.batch_size = 4;
  c.init_seed = 11;
  c.data_seed = 5;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const auto dir = std::filesystem::temp_directory_path() / "rlrs_acceptance_determinism";
  std::filesystem::remove_all(dir);
  std::size_t identical = 0, total = 0;
  for (auto kind : {ModelKind::Moe, ModelKind::Dense}) {
    for (std::uint64_t seed : {0u, 7u}) {
      auto cfg = small_run(kind);
      cfg.data_seed = seed;
      cfg.run_id = std::string(kind_key(kind)) + std::to_string(seed);
      const auto a = export_run(train(cfg), dir / "a");
      const auto b = export_run(train(cfg), dir / "b");
      ++total;
      if (slurp(a.curve) == slurp(b.curve) && slurp(a.meta) == slurp(b.meta) && !slurp(a.curve).empty()) ++identical;
    }
  }
  std::filesystem::remove_all(dir);
  return {identical == total, std::to_string(identical) + "/" + std::to_string(total) +
                                  " repeated runs wrote byte-identical curve CSV and meta files"};
}

Outcome freeze_and_scaling() {
  const auto base = small_run(ModelKind::Moe);
  const auto init = init_model(base.model, base.init_scale, base.init_seed);
  std::size_t exact_freezes = 0;
  const auto tags = active_tags(ModelKind::Moe);
  for (auto frozen : tags) {
    auto cfg = base;
    cfg.rates.per_component[frozen] = {0.0, 0.0};
    const auto r = train_full(cfg);
    bool ok = true;
    for (std::size_t i = 0; i < init.size(); ++i) {
      const bool same = r.params[i].tensor == init[i].tensor;
      ok = ok && same == (init[i].tag == frozen);
    }
    exact_freezes += ok;
  }
  // Power-of-two factors keep eta * lambda exact in binary floating point.
  std::size_t bitwise = 0;
  const std::vector<double> factors{2.0, 0.5, 4.0, 0.25};
  const auto ref = train_full(base);
  for (double c : factors) {
    auto scaled = base;
    scaled.schedule.eta_base *= c;
    for (auto& [tag, r] : scaled.rates.per_component) {
      r.start /= c;
      r.end /= c;
    }
    const auto r = train_full(scaled);
    bitwise += r.params == ref.params && r.log.curve == ref.log.curve && r.log.lr_trace == ref.log.lr_trace;
  }
  return {exact_freezes == tags.size() && bitwise == factors.size(),
          std::to_string(exact_freezes) + "/" + std::to_string(tags.size()) +
              " components frozen exactly with all others moving; " + std::to_string(bitwise) + "/" +
              std::to_string(factors.size()) + " scalings c in {2, 1/2, 4, 1/4} bitwise identical"};
}

Outcome update_magnitudes() {
  std::string detail;
  bool ok = true;
  for (auto kind : {ModelKind::Moe, ModelKind::Dense}) {
    const auto log = train(small_run(kind));
    const std::size_t arity = kind == ModelKind::Moe ? 5 : 4;
    std::size_t bad = 0, points = 0;
    for (const auto& [tag, trace] : log.update_norm_trace) {
      if (trace.size() != kCheckpoints) ok = false;
      for (double x : trace) {
        ++points;
        bad += !(std::isfinite(x) && x >= 0.0);
      }
    }
    ok = ok && log.update_norm_trace.size() == arity && bad == 0;
    const auto header = curve_csv(log).substr(0, curve_csv(log).find('\n'));
    const auto norm_cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
    // percent, step, loss, then one lr and one norm column per component
    ok = ok && norm_cols == 3 + 2 * arity;
    detail += std::string(detail.empty() ? "" : "; ") + std::string(kind_key(kind)) + ": " +
              std::to_string(log.update_norm_trace.size()) + " traces (want " + std::to_string(arity) + "), " +
              std::to_string(bad) + "/" + std::to_string(points) + " non-finite or negative";
  }
  return {ok, detail};
}

// ---- 9 ---------------------------------------------------------------------

TrainConfig desk_config() {
  TrainConfig c;
  c.model.d_model = 64;
  c.model.n_layers = 4;
  c.model.n_heads = 4;
  c.model.n_experts = 8;
  c.model.vocab_size = 256;
  c.model.seq_len = 16;
  c.data.synthetic.vocab_size = 256;
  c.data.synthetic.length = 1000000;
  c.data.synthetic.seed = 1;
  c.schedule.alpha_end = 0.04;
  c.schedule.warmup_fraction = 0.01;
  c.schedule.total_steps = kDeskSteps;
  c.batch_size = 4;
  c.init_seed = 0;
  return c;
}

Outcome desk_scale() {
  const auto t0 = std::chrono::steady_clock::now();
  auto baseline = desk_config();
  baseline.rates = RelativeRates::identity(ModelKind::Moe);
  const auto stream = load_stream(baseline.data);
  const Runner runner = [&](const TrainConfig& c) {
    TrainOptions opt;
    opt.stream = &stream;
    return train_full(c, opt).log;
  };

  // Cheap base-LR tuning: shortened baseline runs on one seed.
  const auto tuned = tune_base_lr({3}, [&](double eta) {
    auto c = baseline;
    c.schedule.eta_base = eta;
    c.schedule.total_steps = kDeskTuneSteps;
    return runner(c).curve.final_loss();
  });
  baseline.schedule.eta_base = tuned.eta_base;
  auto relative = baseline;
  relative.rates = preset(PresetKind::Moe);

  CompareReport report;
  try {
    report = compare(baseline, relative, kDeskSeeds, runner);
  } catch (const DivergenceError& e) {
    return {false, std::string("a run diverged: ") + e.what()};
  }
  bool finite = true;
  for (const auto* runs : {&report.base_runs, &report.rlrs_runs})
    for (const auto& log : *runs) {
      finite = finite && log.curve.complete();
      for (double x : log.curve.samples) finite = finite && std::isfinite(x);
    }
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  std::string detail = std::to_string(parameter_count(baseline.model)) + " params, eta_base " + fmt(tuned.eta_base) +
                       "; final loss base " + fmt(report.base_mean.final_loss()) + " preset " +
                       fmt(report.rlrs_mean.final_loss()) + "; speedup ";
  detail += report.result.reached ? fmt(report.result.percent) + "%" : "not reached (preset never hit base's final loss)";
  detail += " (t_base " + std::to_string(report.result.t_base) + ", t_preset " +
            std::to_string(report.result.t_relative) + "); " + fmt(minutes) + " min";
  // The sign of the speedup is reported, not asserted.
  return {finite, detail};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

const std::vector<Criterion> kCriteria{
    {"schedule closed forms", schedule_closed_forms},
    {"gradient integrity", gradient_integrity},
    {"optimizer oracle", optimizer_oracle},
    {"loss formulas", loss_formulas},
    {"local search", local_search_criterion},
    {"speedup metric", speedup_metric},
    {"determinism", determinism},
    {"freeze and scaling invariants", freeze_and_scaling},
    {"desk-scale reproduction", desk_scale},
    {"update-magnitude traces", update_magnitudes},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<std::size_t> only;
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") {
      strict = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoul(tok));
    } else {
      std::cerr << "usage: acceptance [--only N[,M...]] [--strict]\n";
      return 2;
    }
  }
  int unexpected = 0, failed = 0;
  for (std::size_t i = 0; i < kCriteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = kCriteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what(), false};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << kCriteria[i].name << ": " << o.detail;
    if (!o.pass && o.known) std::cout << " (known failure)";
    std::cout << std::endl;
    if (!o.pass) {
      ++failed;
      if (!o.known || strict) ++unexpected;
    }
  }
  std::cout << failed << " failed, " << unexpected << " unexpected" << std::endl;
  return unexpected == 0 ? 0 : 1;
}
