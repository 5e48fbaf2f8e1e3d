// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_MODEL_HPP
#define RLRS_MODEL_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rlrs/autodiff.hpp"
#include "rlrs/errors.hpp"
#include "rlrs/schedule.hpp"
#include "rlrs/tensor.hpp"
#include "rlrs/util.hpp"

namespace rlrs {

/// Architecture of a decoder-only transformer. `n_experts == 0` selects a
/// dense SwiGLU feed-forward; otherwise every block uses a top-1 MoE layer.
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  double ff_multiplier = 8.0 / 3.0;
  std::size_t n_experts = 0;
  std::size_t vocab_size = 256;
  std::size_t seq_len = 64;

  ModelKind kind() const { return n_experts == 0 ? ModelKind::Dense : ModelKind::Moe; }

  /// Hidden width of each SwiGLU branch, rounded up to a multiple of 8.
  std::size_t ff_hidden() const {
    const double raw = ff_multiplier * static_cast<double>(d_model);
    return std::max<std::size_t>(8, static_cast<std::size_t>(std::ceil(raw / 8.0 - 1e-9)) * 8);
  }

  void validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || vocab_size == 0 || seq_len == 0)
      throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("model.d_model (" + std::to_string(d_model) + ") must be divisible by model.n_heads (" +
                        std::to_string(n_heads) + ")");
    if (!(ff_multiplier > 0) || !std::isfinite(ff_multiplier)) throw ConfigError("model.ff_multiplier must be positive");
    if (n_experts == 1) throw ConfigError("model.n_experts must be 0 (dense) or at least 2");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TaggedParameter {
  std::string name;
  Tensor tensor;
  ComponentTag tag;
};

/// Named, tagged trainable tensors in a fixed order.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor, ComponentTag tag) {
    if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(tensor), tag});
  }

  std::size_t size() const { return params_.size(); }
  TaggedParameter& operator[](std::size_t i) { return params_[i]; }
  const TaggedParameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }
  const Tensor& tensor(std::string_view name) const { return params_[index_of(name)].tensor; }

  std::set<ComponentTag> tags() const {
    std::set<ComponentTag> out;
    for (const auto& p : params_) out.insert(p.tag);
    return out;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || a[i].tag != b[i].tag || !(a[i].tensor == b[i].tensor)) return false;
    return true;
  }

 private:
  std::vector<TaggedParameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Schedule group of a parameter, derived from its dotted name.
///
///   embed.{token,position}                       Embedding
///   layers.N.attention.{norm,wq,wk,wv,wo}         Attention
///   layers.N.ff.{norm,w_gate,w_up,w_down}         FeedForward
///   layers.N.moe.router                           Router
///   layers.N.moe.norm                             Experts
///   layers.N.moe.experts.E.{w_gate,w_up,w_down}   Experts
///   final_norm.gain, unembed.weight               Unembedding
inline ComponentTag tag_of(std::string_view name) {
  const auto parts = split(name, '.');
  auto is_index = [](const std::string& s) {
    std::uint64_t v;
    return parse_uint(s, v);
  };
  auto one_of = [](const std::string& s, std::initializer_list<std::string_view> options) {
    for (auto o : options)
      if (s == o) return true;
    return false;
  };
  const auto n = parts.size();
  if (n == 2 && parts[0] == "embed" && one_of(parts[1], {"token", "position"})) return ComponentTag::Embedding;
  if (n == 2 && parts[0] == "unembed" && parts[1] == "weight") return ComponentTag::Unembedding;
  if (n == 2 && parts[0] == "final_norm" && parts[1] == "gain") return ComponentTag::Unembedding;
  if (n >= 4 && parts[0] == "layers" && is_index(parts[1])) {
    const auto& block = parts[2];
    if (n == 4 && block == "attention" && one_of(parts[3], {"norm", "wq", "wk", "wv", "wo"}))
      return ComponentTag::Attention;
    if (n == 4 && block == "ff" && one_of(parts[3], {"norm", "w_gate", "w_up", "w_down"}))
      return ComponentTag::FeedForward;
    if (n == 4 && block == "moe" && parts[3] == "router") return ComponentTag::Router;
    if (n == 4 && block == "moe" && parts[3] == "norm") return ComponentTag::Experts;
    if (n == 6 && block == "moe" && parts[3] == "experts" && is_index(parts[4]) &&
        one_of(parts[5], {"w_gate", "w_up", "w_down"}))
      return ComponentTag::Experts;
  }
  throw ConfigError("no component tag for parameter name '" + std::string(name) + "'");
}

namespace detail {

/// Truncated normal at +-2 std by rejection.
inline Tensor truncated_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& x : t.data()) {
    double z;
    do z = normal(rng);
    while (std::abs(z) > 2.0);
    x = stddev * z;
  }
  return t;
}

}  // namespace detail

/// Fresh parameters: weight matrices ~ truncated normal with
/// std = init_scale / sqrt(fan_in), norm gains = 1.
///
/// Linear maps are stored [in, out] and use fan_in = in. Embedding tables
/// [rows, d_model] use fan_in = d_model.
inline ParameterSet init_model(const ModelConfig& config, double init_scale, std::uint64_t seed) {
  config.validate();
  if (!(init_scale > 0) || !std::isfinite(init_scale)) throw ConfigError("init_scale must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model, h = config.ff_hidden();
  ParameterSet params;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    params.add(name, detail::truncated_normal({in, out}, init_scale / std::sqrt(static_cast<double>(in)), rng),
               tag_of(name));
  };
  auto table = [&](const std::string& name, std::size_t rows) {
    params.add(name, detail::truncated_normal({rows, d}, init_scale / std::sqrt(static_cast<double>(d)), rng),
               tag_of(name));
  };
  auto gain = [&](const std::string& name) { params.add(name, Tensor({d}, 1.0), tag_of(name)); };

  table("embed.token", config.vocab_size);
  table("embed.position", config.seq_len);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    gain(p + "attention.norm");
    for (const char* w : {"wq", "wk", "wv", "wo"}) linear(p + "attention." + w, d, d);
    if (config.kind() == ModelKind::Dense) {
      gain(p + "ff.norm");
      linear(p + "ff.w_gate", d, h);
      linear(p + "ff.w_up", d, h);
      linear(p + "ff.w_down", h, d);
    } else {
      gain(p + "moe.norm");
      linear(p + "moe.router", d, config.n_experts);
      for (std::size_t e = 0; e < config.n_experts; ++e) {
        const std::string ep = p + "moe.experts." + std::to_string(e) + ".";
        linear(ep + "w_gate", d, h);
        linear(ep + "w_up", d, h);
        linear(ep + "w_down", h, d);
      }
    }
  }
  gain("final_norm.gain");
  linear("unembed.weight", d, config.vocab_size);
  return params;
}

/// batch x seq token ids, row-major.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> ids;

  std::uint32_t at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  friend bool operator==(const TokenMatrix&, const TokenMatrix&) = default;
};

/// Values of one router's top-1 decision.
struct RouterDecision {
  Tensor logits;
  Tensor probs;
  std::vector<std::size_t> chosen;
};

struct RouterOutput {
  Var logits;
  Var probs;
  std::vector<std::size_t> chosen;

  RouterDecision decision() const { return {logits.value(), probs.value(), chosen}; }
};

struct ForwardResult {
  Var logits;  // [batch, seq, vocab]
  std::vector<RouterOutput> routers;
  std::vector<Var> parameters;  // aligned with the ParameterSet
};

/// Index of the largest entry in each row; ties go to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Tensor& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j)
      if (probs.at(i, j) > probs.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

namespace detail {

inline Var causal_attention(Var h, const ModelConfig& cfg, std::size_t batch, std::size_t seq, Var wq, Var wk,
                            Var wv, Var wo) {
  const Var q = matmul(h, wq), k = matmul(h, wk), v = matmul(h, wv);
  const std::size_t dh = cfg.d_model / cfg.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> rows;
  rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<Var> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      const Var qs = slice(q, b * seq, seq, hd * dh, dh);
      const Var ks = slice(k, b * seq, seq, hd * dh, dh);
      const Var vs = slice(v, b * seq, seq, hd * dh, dh);
      const Var scores = scale(matmul(qs, transpose(ks)), inv_sqrt);
      heads.push_back(matmul(softmax(scores, /*causal=*/true), vs));
    }
    rows.push_back(concat(heads, 1));
  }
  return matmul(concat(rows, 0), wo);
}

}  // namespace detail

/// Logits for `tokens` (batch x seq, seq <= config.seq_len) plus one router
/// record per MoE layer. Parameters are bound to `tape` in place.
///
/// MoE dispatch is dropless top-1: each token goes to its argmax expert and
/// the expert output is multiplied by that expert's router probability.
inline ForwardResult forward(Tape& tape, const ParameterSet& params, const ModelConfig& config,
                             const TokenMatrix& tokens) {
  config.validate();
  const std::size_t batch = tokens.rows, seq = tokens.cols, n = batch * seq;
  if (n == 0 || tokens.ids.size() != n) throw DomainError("token matrix is empty or malformed");
  if (seq > config.seq_len)
    throw DomainError("sequence length " + std::to_string(seq) + " exceeds model.seq_len " +
                      std::to_string(config.seq_len));
  for (auto id : tokens.ids)
    if (id >= config.vocab_size)
      throw DomainError("token id " + std::to_string(id) + " out of range for vocab " +
                        std::to_string(config.vocab_size));

  ForwardResult result;
  result.parameters.reserve(params.size());
  for (const auto& p : params) result.parameters.push_back(tape.parameter(p.tensor));
  auto P = [&](std::string_view name) { return result.parameters[params.index_of(name)]; };

  std::vector<std::uint32_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<std::uint32_t>(i % seq);
  Var x = add(embedding_lookup(P("embed.token"), tokens.ids), embedding_lookup(P("embed.position"), positions));

  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const Var h = rms_norm(x, P(p + "attention.norm"));
    x = add(x, detail::causal_attention(h, config, batch, seq, P(p + "attention.wq"), P(p + "attention.wk"),
                                        P(p + "attention.wv"), P(p + "attention.wo")));
    if (config.kind() == ModelKind::Dense) {
      const Var h2 = rms_norm(x, P(p + "ff.norm"));
      x = add(x, swiglu(h2, P(p + "ff.w_gate"), P(p + "ff.w_up"), P(p + "ff.w_down")));
      continue;
    }
    const Var h2 = rms_norm(x, P(p + "moe.norm"));
    RouterOutput router;
    router.logits = matmul(h2, P(p + "moe.router"));
    router.probs = softmax(router.logits);
    router.chosen = argmax_rows(router.probs.value());
    std::vector<Var> parts;
    std::vector<std::vector<std::size_t>> index;
    for (std::size_t e = 0; e < config.n_experts; ++e) {
      std::vector<std::size_t> rows;
      for (std::size_t t = 0; t < n; ++t)
        if (router.chosen[t] == e) rows.push_back(t);
      if (rows.empty()) continue;
      const std::string ep = p + "moe.experts." + std::to_string(e) + ".";
      const Var y = swiglu(gather_rows(h2, rows), P(ep + "w_gate"), P(ep + "w_up"), P(ep + "w_down"));
      const Var gate = gather_elements(router.probs, rows, std::vector<std::size_t>(rows.size(), e));
      parts.push_back(multiply(y, gate));
      index.push_back(std::move(rows));
    }
    x = add(x, scatter_rows(parts, std::move(index), n));
    result.routers.push_back(std::move(router));
  }
  const Var logits = matmul(rms_norm(x, P("final_norm.gain")), P("unembed.weight"));
  result.logits = reshape(logits, {batch, seq, config.vocab_size});
  return result;
}

}  // namespace rlrs

#endif  // RLRS_MODEL_HPP
