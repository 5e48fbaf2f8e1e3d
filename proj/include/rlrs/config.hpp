// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_CONFIG_HPP
#define RLRS_CONFIG_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rlrs/data.hpp"
#include "rlrs/errors.hpp"
#include "rlrs/losses.hpp"
#include "rlrs/model.hpp"
#include "rlrs/schedule.hpp"
#include "rlrs/util.hpp"

namespace rlrs {

/// Ordered `section.key = value` assignments.
///
/// One assignment per line; `#` starts a comment; blank lines are ignored.
class FlatConfig {
 public:
  static FlatConfig parse(std::string_view text, const std::string& origin = "<config>") {
    FlatConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto eol = text.find('\n', pos);
      std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
      pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = origin + ":" + std::to_string(line_no);
      if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (cfg.has(key)) throw ConfigError(where + ": duplicate key " + key);
      cfg.set(key, value);
    }
    return cfg;
  }

  static FlatConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  void set(const std::string& key, std::string value) {
    auto it = index_.find(key);
    if (it != index_.end()) {
      entries_[it->second].second = std::move(value);
      return;
    }
    index_.emplace(key, entries_.size());
    entries_.emplace_back(key, std::move(value));
  }

  bool has(const std::string& key) const { return index_.count(key) != 0; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_text() const {
    std::string s;
    for (const auto& [k, v] : entries_) s += k + " = " + v + "\n";
    return s;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Where training tokens come from: a byte file, or a synthetic Markov chain.
struct DataSpec {
  std::string path;  // empty selects the synthetic corpus
  SyntheticSpec synthetic;

  std::size_t vocab_size() const { return path.empty() ? synthetic.vocab_size : 256; }
  friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct TrainConfig {
  ModelConfig model;
  ScheduleSpec schedule;
  RelativeRates rates;
  LossConfig loss;
  double weight_decay = 0.1;
  double init_scale = 0.15;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 0.0;  // 0 disables clipping
  std::vector<ComponentTag> decay_exclude;
  std::size_t batch_size = 8;
  DataSpec data;
  std::uint64_t init_seed = 0;
  std::uint64_t data_seed = 0;
  std::string run_id = "run";
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_dir;
  std::map<std::string, std::string> provenance;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    model.validate();
    schedule.validate();
    rates.validate(model.kind());
    loss.validate();
    if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
    if (!(weight_decay >= 0)) throw ConfigError("optimizer.weight_decay must be non-negative");
    if (!(init_scale > 0)) throw ConfigError("train.init_scale must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("optimizer betas must lie in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("optimizer.epsilon must be positive");
    if (!(grad_clip >= 0)) throw ConfigError("optimizer.grad_clip must be non-negative");
    if (data.vocab_size() > model.vocab_size)
      throw ConfigError("model.vocab_size " + std::to_string(model.vocab_size) + " is smaller than the data vocabulary " +
                        std::to_string(data.vocab_size()));
    if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos)
      throw ConfigError("train.run_id must be a non-empty file name");
  }
};

namespace detail {

class KeyReader {
 public:
  explicit KeyReader(const FlatConfig& cfg) : cfg_(cfg) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    return cfg_.get(key);
  }

  double real(const std::string& key, double fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    double out;
    if (!parse_double(*v, out)) throw ConfigError(key + ": expected a number, got '" + *v + "'");
    return out;
  }

  double required_real(const std::string& key) {
    if (!cfg_.has(key)) throw ConfigError("missing required key " + key);
    return real(key, 0.0);
  }

  std::uint64_t uint(const std::string& key, std::uint64_t fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    std::uint64_t out;
    if (!parse_uint(*v, out)) throw ConfigError(key + ": expected a non-negative integer, got '" + *v + "'");
    return out;
  }

  std::string text(const std::string& key, std::string fallback) {
    auto v = raw(key);
    return v ? *v : fallback;
  }

  /// Keys present in the config that were never read, except `provenance.*`.
  void reject_unknown() const {
    for (const auto& [k, v] : cfg_.entries()) {
      if (k.rfind("provenance.", 0) == 0) continue;
      if (!used_.count(k)) throw ConfigError("unknown config key " + k);
    }
  }

 private:
  const FlatConfig& cfg_;
  std::set<std::string> used_;
};

}  // namespace detail

/// Builds a TrainConfig from flat keys. `schedule.eta_base` is required;
/// every other key has a default. Unknown keys are rejected.
inline TrainConfig train_config_from_flat(const FlatConfig& flat) {
  detail::KeyReader r(flat);
  TrainConfig c;
  c.data.path = r.text("data.path", "");
  c.data.synthetic.seed = r.uint("data.synthetic.seed", c.data.synthetic.seed);
  c.data.synthetic.length = r.uint("data.synthetic.length", c.data.synthetic.length);
  c.data.synthetic.order = static_cast<int>(r.uint("data.synthetic.order", 1));
  c.data.synthetic.vocab_size = r.uint("data.synthetic.vocab_size", c.data.synthetic.vocab_size);
  c.data.synthetic.branching = r.uint("data.synthetic.branching", c.data.synthetic.branching);

  c.model.d_model = r.uint("model.d_model", c.model.d_model);
  c.model.n_layers = r.uint("model.n_layers", c.model.n_layers);
  c.model.n_heads = r.uint("model.n_heads", c.model.n_heads);
  c.model.ff_multiplier = r.real("model.ff_multiplier", c.model.ff_multiplier);
  c.model.n_experts = r.uint("model.n_experts", c.model.n_experts);
  c.model.vocab_size = r.uint("model.vocab_size", c.data.vocab_size());
  c.model.seq_len = r.uint("model.seq_len", 32);
  const ModelKind kind = c.model.kind();

  c.schedule.eta_base = r.required_real("schedule.eta_base");
  c.schedule.alpha_end = r.real("schedule.alpha_end", kind == ModelKind::Moe ? 0.04 : 0.06);
  c.schedule.warmup_fraction = r.real("schedule.warmup_fraction", 0.01);
  c.schedule.total_steps = r.uint("schedule.total_steps", 1000);

  c.rates = RelativeRates::identity(kind);
  for (auto tag : kAllTags) {
    const std::string base = "rlrs." + std::string(tag_key(tag));
    const bool present = flat.has(base + ".start") || flat.has(base + ".end");
    if (!present) continue;
    if (!c.rates.contains(tag))
      throw ConfigError(base + " is not a component of a " + std::string(kind_key(kind)) + " model");
    c.rates.per_component[tag].start = r.real(base + ".start", 1.0);
    c.rates.per_component[tag].end = r.real(base + ".end", 1.0);
  }

  c.loss.z_loss_weight = r.real("loss.z_loss_weight", c.loss.z_loss_weight);
  c.loss.load_balance_weight = r.real("loss.load_balance_weight", c.loss.load_balance_weight);

  c.weight_decay = r.real("optimizer.weight_decay", c.weight_decay);
  c.beta1 = r.real("optimizer.beta1", c.beta1);
  c.beta2 = r.real("optimizer.beta2", c.beta2);
  c.epsilon = r.real("optimizer.epsilon", c.epsilon);
  c.grad_clip = r.real("optimizer.grad_clip", c.grad_clip);
  for (const auto& name : split(r.text("optimizer.decay_exclude", ""), ',')) {
    if (name.empty()) continue;
    auto tag = parse_tag(name);
    if (!tag) throw ConfigError("optimizer.decay_exclude: unknown component '" + name + "'");
    c.decay_exclude.push_back(*tag);
  }

  c.init_scale = r.real("train.init_scale", c.init_scale);
  c.batch_size = r.uint("train.batch_size", c.batch_size);
  c.init_seed = r.uint("train.init_seed", c.init_seed);
  c.data_seed = r.uint("train.data_seed", c.data_seed);
  c.run_id = r.text("train.run_id", c.run_id);
  c.checkpoint_every = r.uint("train.checkpoint_every", 0);
  c.checkpoint_dir = r.text("train.checkpoint_dir", "");

  for (const auto& [k, v] : flat.entries())
    if (k.rfind("provenance.", 0) == 0) c.provenance[k.substr(11)] = v;

  r.reject_unknown();
  c.validate();
  return c;
}

/// Canonical flat form; parsing it back yields an equal TrainConfig.
inline FlatConfig train_config_to_flat(const TrainConfig& c) {
  FlatConfig f;
  auto real = [&](const std::string& k, double v) { f.set(k, format_double(v)); };
  auto uint = [&](const std::string& k, std::uint64_t v) { f.set(k, std::to_string(v)); };
  uint("model.d_model", c.model.d_model);
  uint("model.n_layers", c.model.n_layers);
  uint("model.n_heads", c.model.n_heads);
  real("model.ff_multiplier", c.model.ff_multiplier);
  uint("model.n_experts", c.model.n_experts);
  uint("model.vocab_size", c.model.vocab_size);
  uint("model.seq_len", c.model.seq_len);
  real("schedule.eta_base", c.schedule.eta_base);
  real("schedule.alpha_end", c.schedule.alpha_end);
  real("schedule.warmup_fraction", c.schedule.warmup_fraction);
  uint("schedule.total_steps", c.schedule.total_steps);
  for (auto tag : active_tags(c.model.kind())) {
    const std::string base = "rlrs." + std::string(tag_key(tag));
    real(base + ".start", c.rates.at(tag).start);
    real(base + ".end", c.rates.at(tag).end);
  }
  real("loss.z_loss_weight", c.loss.z_loss_weight);
  real("loss.load_balance_weight", c.loss.load_balance_weight);
  real("optimizer.weight_decay", c.weight_decay);
  real("optimizer.beta1", c.beta1);
  real("optimizer.beta2", c.beta2);
  real("optimizer.epsilon", c.epsilon);
  real("optimizer.grad_clip", c.grad_clip);
  std::string excl;
  for (auto t : c.decay_exclude) excl += (excl.empty() ? "" : ",") + std::string(tag_key(t));
  f.set("optimizer.decay_exclude", excl);
  real("train.init_scale", c.init_scale);
  uint("train.batch_size", c.batch_size);
  uint("train.init_seed", c.init_seed);
  uint("train.data_seed", c.data_seed);
  f.set("train.run_id", c.run_id);
  uint("train.checkpoint_every", c.checkpoint_every);
  f.set("train.checkpoint_dir", c.checkpoint_dir);
  if (c.data.path.empty()) {
    uint("data.synthetic.seed", c.data.synthetic.seed);
    uint("data.synthetic.length", c.data.synthetic.length);
    uint("data.synthetic.order", static_cast<std::uint64_t>(c.data.synthetic.order));
    uint("data.synthetic.vocab_size", c.data.synthetic.vocab_size);
    uint("data.synthetic.branching", c.data.synthetic.branching);
  } else {
    f.set("data.path", c.data.path);
  }
  for (const auto& [k, v] : c.provenance) f.set("provenance." + k, v);
  return f;
}

/// The relative rates as config text, one `rlrs.<component>.{start,end}` per line.
inline std::string rates_to_text(const RelativeRates& rates) {
  std::string s;
  for (auto tag : kAllTags) {
    if (!rates.contains(tag)) continue;
    const std::string base = "rlrs." + std::string(tag_key(tag));
    s += base + ".start = " + format_double(rates.at(tag).start) + "\n";
    s += base + ".end = " + format_double(rates.at(tag).end) + "\n";
  }
  return s;
}

}  // namespace rlrs

#endif  // RLRS_CONFIG_HPP
