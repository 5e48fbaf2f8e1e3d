// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_LOSSES_HPP
#define RLRS_LOSSES_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rlrs/autodiff.hpp"
#include "rlrs/errors.hpp"
#include "rlrs/model.hpp"
#include "rlrs/util.hpp"

namespace rlrs {

struct LossConfig {
  double z_loss_weight = 0.001;
  double load_balance_weight = 0.01;

  void validate() const {
    if (!(z_loss_weight >= 0) || !std::isfinite(z_loss_weight))
      throw ConfigError("loss.z_loss_weight must be finite and non-negative");
    if (!(load_balance_weight >= 0) || !std::isfinite(load_balance_weight))
      throw ConfigError("loss.load_balance_weight must be finite and non-negative");
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

namespace detail {

inline double log_sum_exp(const double* row, std::size_t n) {
  double mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
  return mx + std::log(total);
}

inline void require_finite(const Tensor& t, const char* what) {
  for (double x : t.data())
    if (!std::isfinite(x)) throw NumericError(std::string(what) + " contains a non-finite value");
}

}  // namespace detail

/// Mean next-token negative log-likelihood. Rows of `logits` (all leading
/// dimensions flattened) align with `targets`.
inline double cross_entropy(const Tensor& logits, std::span<const std::uint32_t> targets) {
  detail::require_finite(logits, "logits");
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  if (targets.size() != rows)
    throw DomainError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                      " rows");
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (targets[i] >= vocab) throw DomainError("cross_entropy: target id out of range");
    const double* row = logits.ptr() + i * vocab;
    total += detail::log_sum_exp(row, vocab) - row[targets[i]];
  }
  return total / static_cast<double>(rows);
}

inline Var cross_entropy(Var logits, std::vector<std::uint32_t> targets) {
  const double value = cross_entropy(logits.value(), targets);
  return logits.tape().record(
      Tensor::scalar(value), {logits}, [logits, targets = std::move(targets)](Tape& tape, const Tensor&, const Tensor& g) {
        const Tensor& lv = logits.value();
        const std::size_t rows = lv.rows(), vocab = lv.cols();
        const double coeff = g[0] / static_cast<double>(rows);
        auto& gl = tape.grad_buffer(logits);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* row = lv.ptr() + i * vocab;
          const double lse = detail::log_sum_exp(row, vocab);
          double* out = gl.ptr() + i * vocab;
          for (std::size_t j = 0; j < vocab; ++j) out[j] += coeff * std::exp(row[j] - lse);
          out[targets[i]] -= coeff;
        }
      });
}

/// Mean over tokens of the squared log-partition of the router logits.
inline double z_loss(const Tensor& router_logits) {
  detail::require_finite(router_logits, "router logits");
  const std::size_t rows = router_logits.rows(), n = router_logits.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double lse = detail::log_sum_exp(router_logits.ptr() + i * n, n);
    total += lse * lse;
  }
  return total / static_cast<double>(rows);
}

inline Var z_loss(Var router_logits) {
  const double value = z_loss(router_logits.value());
  return router_logits.tape().record(Tensor::scalar(value), {router_logits},
                                     [router_logits](Tape& tape, const Tensor&, const Tensor& g) {
    const Tensor& lv = router_logits.value();
    const std::size_t rows = lv.rows(), n = lv.cols();
    auto& gl = tape.grad_buffer(router_logits);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* row = lv.ptr() + i * n;
      const double lse = detail::log_sum_exp(row, n);
      const double coeff = g[0] * 2.0 * lse / static_cast<double>(rows);
      for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += coeff * std::exp(row[j] - lse);
    }
  });
}

namespace detail {

/// Fraction of tokens whose top-1 choice is each expert.
inline std::vector<double> dispatch_fractions(std::span<const std::size_t> chosen, std::size_t n_experts) {
  if (chosen.empty()) throw DomainError("load balancing loss needs at least one token");
  std::vector<double> f(n_experts, 0.0);
  for (auto c : chosen) {
    if (c >= n_experts) throw DomainError("expert index out of range");
    f[c] += 1.0;
  }
  for (auto& x : f) x /= static_cast<double>(chosen.size());
  return f;
}

}  // namespace detail

/// n_experts * sum_i f_i * P_i, where f_i is the fraction of tokens routed to
/// expert i and P_i its mean router probability. The f_i are a hard census:
/// only P carries gradient.
inline double load_balance_loss(const Tensor& probs, std::span<const std::size_t> chosen, std::size_t n_experts) {
  const auto f = detail::dispatch_fractions(chosen, n_experts);
  if (probs.rows() != chosen.size() || probs.cols() != n_experts)
    throw DomainError("load_balance_loss: probabilities " + shape_string(probs.shape()) + " do not match " +
                      std::to_string(chosen.size()) + " tokens x " + std::to_string(n_experts) + " experts");
  std::vector<double> mean_prob(n_experts, 0.0);
  for (std::size_t t = 0; t < probs.rows(); ++t)
    for (std::size_t i = 0; i < n_experts; ++i) mean_prob[i] += probs.at(t, i);
  double total = 0.0;
  for (std::size_t i = 0; i < n_experts; ++i) total += f[i] * (mean_prob[i] / static_cast<double>(probs.rows()));
  return static_cast<double>(n_experts) * total;
}

inline double load_balance_loss(const RouterDecision& decision, std::size_t n_experts) {
  return load_balance_loss(decision.probs, decision.chosen, n_experts);
}

inline Var load_balance_loss(Var probs, std::vector<std::size_t> chosen, std::size_t n_experts) {
  const double value = load_balance_loss(probs.value(), chosen, n_experts);
  auto f = detail::dispatch_fractions(chosen, n_experts);
  return probs.tape().record(Tensor::scalar(value), {probs},
                             [probs, f = std::move(f), n_experts](Tape& tape, const Tensor&, const Tensor& g) {
    auto& gp = tape.grad_buffer(probs);
    const std::size_t rows = gp.rows();
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t i = 0; i < n_experts; ++i)
        gp[t * n_experts + i] += g[0] * static_cast<double>(n_experts) * f[i] / static_cast<double>(rows);
  });
}

/// ce + w_z * z + w_lb * lb for MoE models; ce alone for dense models.
inline double total_loss(double ce, double z, double lb, const LossConfig& cfg, ModelKind kind = ModelKind::Moe) {
  if (kind == ModelKind::Dense) return ce;
  return ce + cfg.z_loss_weight * z + cfg.load_balance_weight * lb;
}

inline Var total_loss(Var ce, Var z, Var lb, const LossConfig& cfg) {
  return add(add(ce, scale(z, cfg.z_loss_weight)), scale(lb, cfg.load_balance_weight));
}

/// Cross-entropy plus auxiliary router losses summed over MoE layers.
struct ModelLoss {
  Var total;
  Var cross_entropy;
  double z_loss = 0.0;        // summed over layers, unweighted
  double load_balance = 0.0;  // summed over layers, unweighted
};

inline ModelLoss model_loss(const ForwardResult& fwd, const TokenMatrix& targets, const LossConfig& cfg,
                            std::size_t n_experts) {
  ModelLoss out;
  out.cross_entropy = cross_entropy(fwd.logits, targets.ids);
  out.total = out.cross_entropy;
  if (fwd.routers.empty()) return out;
  Var z_sum, lb_sum;
  for (const auto& r : fwd.routers) {
    const Var z = z_loss(r.logits);
    const Var lb = load_balance_loss(r.probs, r.chosen, n_experts);
    z_sum = z_sum.valid() ? add(z_sum, z) : z;
    lb_sum = lb_sum.valid() ? add(lb_sum, lb) : lb;
  }
  out.z_loss = z_sum.value()[0];
  out.load_balance = lb_sum.value()[0];
  out.total = total_loss(out.cross_entropy, z_sum, lb_sum, cfg);
  return out;
}

}  // namespace rlrs

#endif  // RLRS_LOSSES_HPP
