// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_OPTIMIZER_HPP
#define RLRS_OPTIMIZER_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rlrs/errors.hpp"
#include "rlrs/model.hpp"
#include "rlrs/schedule.hpp"
#include "rlrs/tensor.hpp"

namespace rlrs {

using LrByTag = std::map<ComponentTag, double>;

/// AdamW moments and hyperparameters for one ParameterSet.
struct AdamWState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.1;
  std::vector<ComponentTag> decay_exclude;  // groups without weight decay
  std::size_t step_count = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  /// Zero moments shaped like `params`.
  void reset(const ParameterSet& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.push_back(Tensor::zeros_like(p.tensor));
      v.push_back(Tensor::zeros_like(p.tensor));
    }
    step_count = 0;
  }

  bool decays(ComponentTag tag) const {
    return std::find(decay_exclude.begin(), decay_exclude.end(), tag) == decay_exclude.end();
  }
};

/// One decoupled-weight-decay Adam step with a learning rate per tag group.
///
/// Returns the pre-LR update of every parameter, m_hat / (sqrt(v_hat) + eps)
/// + wd * theta, which is what gets multiplied by the group's learning rate.
/// Nothing is modified if a tag is missing from `lr_by_tag` or a gradient is
/// non-finite.
inline std::vector<Tensor> adamw_step(AdamWState& state, ParameterSet& params, std::span<const Tensor> grads,
                                      const LrByTag& lr_by_tag) {
  if (grads.size() != params.size())
    throw DomainError("adamw_step: " + std::to_string(grads.size()) + " gradients for " +
                      std::to_string(params.size()) + " parameters");
  if (state.m.size() != params.size()) state.reset(params);
  std::vector<double> lrs(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto it = lr_by_tag.find(p.tag);
    if (it == lr_by_tag.end())
      throw ConfigError("no learning rate for component '" + std::string(tag_key(p.tag)) + "' (parameter " + p.name +
                        ")");
    lrs[i] = it->second;
    if (grads[i].shape() != p.tensor.shape())
      throw DomainError("gradient shape " + shape_string(grads[i].shape()) + " does not match parameter " + p.name +
                        " " + shape_string(p.tensor.shape()));
    for (double g : grads[i].data())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  std::vector<Tensor> updates;
  updates.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    const double wd = state.decays(params[i].tag) ? state.weight_decay : 0.0;
    Tensor update = Tensor::zeros_like(theta);
    double* th = theta.ptr();
    double* mp = m.ptr();
    double* vp = v.ptr();
    double* up = update.ptr();
    const double* gp = g.ptr();
    const double b1 = state.beta1, b2 = state.beta2, eps = state.epsilon, lr = lrs[i];
    for (std::size_t j = 0, n = theta.size(); j < n; ++j) {
      mp[j] = b1 * mp[j] + (1.0 - b1) * gp[j];
      vp[j] = b2 * vp[j] + (1.0 - b2) * gp[j] * gp[j];
      const double m_hat = mp[j] / bc1;
      const double v_hat = vp[j] / bc2;
      up[j] = m_hat / (std::sqrt(v_hat) + eps) + wd * th[j];
      th[j] = th[j] - lr * up[j];
    }
    updates.push_back(std::move(update));
  }
  return updates;
}

/// L2 norm of all pre-LR updates belonging to `tag`.
inline double update_magnitude(const ParameterSet& params, std::span<const Tensor> updates, ComponentTag tag) {
  if (updates.size() != params.size()) throw DomainError("update list does not match the parameter set");
  bool found = false;
  double ss = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tag != tag) continue;
    found = true;
    for (double u : updates[i].data()) ss += u * u;
  }
  if (!found) throw ConfigError("no parameters tagged '" + std::string(tag_key(tag)) + "'");
  return std::sqrt(ss);
}

/// Global L2 norm over a gradient list.
inline double global_norm(std::span<const Tensor> grads) {
  double ss = 0.0;
  for (const auto& g : grads)
    for (double x : g.data()) ss += x * x;
  return std::sqrt(ss);
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
inline void clip_global_norm(std::span<Tensor> grads, double max_norm) {
  const double norm = global_norm(grads);
  if (!(norm > max_norm)) return;
  const double factor = max_norm / norm;
  for (auto& g : grads)
    for (auto& x : g.data()) x *= factor;
}

}  // namespace rlrs

#endif  // RLRS_OPTIMIZER_HPP
