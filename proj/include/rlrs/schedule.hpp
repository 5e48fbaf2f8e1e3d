// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_SCHEDULE_HPP
#define RLRS_SCHEDULE_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rlrs/errors.hpp"
#include "rlrs/util.hpp"

namespace rlrs {

/// Parameter class that owns one learning-rate schedule.
enum class ComponentTag { Embedding, Attention, FeedForward, Router, Experts, Unembedding };

inline constexpr std::array<ComponentTag, 6> kAllTags = {
    ComponentTag::Embedding, ComponentTag::Attention,   ComponentTag::FeedForward,
    ComponentTag::Router,    ComponentTag::Experts,     ComponentTag::Unembedding};

enum class ModelKind { Dense, Moe };

/// Lower-case key used in config files and CSV headers.
inline std::string_view tag_key(ComponentTag tag) {
  switch (tag) {
    case ComponentTag::Embedding: return "embedding";
    case ComponentTag::Attention: return "attention";
    case ComponentTag::FeedForward: return "feedforward";
    case ComponentTag::Router: return "router";
    case ComponentTag::Experts: return "experts";
    case ComponentTag::Unembedding: return "unembedding";
  }
  return "unknown";
}

inline std::optional<ComponentTag> parse_tag(std::string_view key) {
  for (auto tag : kAllTags)
    if (tag_key(tag) == key) return tag;
  return std::nullopt;
}

/// Tags whose schedules are active for a model kind, in canonical order.
inline std::vector<ComponentTag> active_tags(ModelKind kind) {
  if (kind == ModelKind::Dense)
    return {ComponentTag::Embedding, ComponentTag::Attention, ComponentTag::FeedForward,
            ComponentTag::Unembedding};
  return {ComponentTag::Embedding, ComponentTag::Attention, ComponentTag::Router,
          ComponentTag::Experts, ComponentTag::Unembedding};
}

inline std::string_view kind_key(ModelKind kind) { return kind == ModelKind::Dense ? "dense" : "moe"; }

/// Base warmup + cosine parameters shared by every component.
struct ScheduleSpec {
  double eta_base = 1e-3;
  double alpha_end = 0.04;
  double warmup_fraction = 0.01;
  std::size_t total_steps = 1000;

  std::size_t warmup_steps() const {
    return static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
  }

  void validate() const {
    if (!(eta_base > 0) || !std::isfinite(eta_base))
      throw ConfigError("schedule.eta_base must be positive, got " + format_double(eta_base));
    if (!(alpha_end > 0 && alpha_end <= 1))
      throw ConfigError("schedule.alpha_end must lie in (0, 1], got " + format_double(alpha_end));
    if (!(warmup_fraction >= 0 && warmup_fraction < 1))
      throw ConfigError("schedule.warmup_fraction must lie in [0, 1), got " +
                        format_double(warmup_fraction));
    if (total_steps == 0) throw ConfigError("schedule.total_steps must be positive");
    if (warmup_steps() >= total_steps)
      throw ConfigError("schedule.warmup_fraction leaves no steps for the cosine segment");
  }

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

struct ComponentRates {
  double start = 1.0;
  double end = 1.0;
  friend bool operator==(const ComponentRates&, const ComponentRates&) = default;
};

/// Per-component multipliers of the base start and end learning rates.
///
/// Values are normally positive. Zero is accepted so that a component can be
/// frozen outright.
struct RelativeRates {
  std::map<ComponentTag, ComponentRates> per_component;

  static RelativeRates identity(ModelKind kind) {
    RelativeRates rates;
    for (auto tag : active_tags(kind)) rates.per_component[tag] = {1.0, 1.0};
    return rates;
  }

  const ComponentRates& at(ComponentTag tag) const {
    auto it = per_component.find(tag);
    if (it == per_component.end())
      throw ConfigError("no relative rates for component '" + std::string(tag_key(tag)) + "'");
    return it->second;
  }

  bool contains(ComponentTag tag) const { return per_component.count(tag) != 0; }

  /// Checks that the entries cover exactly the active set of `kind`.
  void validate(ModelKind kind) const {
    const auto active = active_tags(kind);
    for (auto tag : active) {
      const auto& r = at(tag);
      if (!(r.start >= 0) || !(r.end >= 0) || !std::isfinite(r.start) || !std::isfinite(r.end))
        throw ConfigError("rlrs." + std::string(tag_key(tag)) + " multipliers must be finite and non-negative");
    }
    for (const auto& [tag, r] : per_component) {
      bool found = false;
      for (auto a : active) found = found || a == tag;
      if (!found)
        throw ConfigError("rlrs." + std::string(tag_key(tag)) + " is not a component of a " +
                          std::string(kind_key(kind)) + " model");
    }
  }

  friend bool operator==(const RelativeRates&, const RelativeRates&) = default;
};

struct EndpointRates {
  double start;
  double end;
};

/// Decoupled start/end learning rates of one component.
inline EndpointRates endpoint_lrs(const ScheduleSpec& spec, const RelativeRates& rates, ComponentTag tag) {
  const auto& r = rates.at(tag);
  return {spec.eta_base * r.start, spec.eta_base * spec.alpha_end * r.end};
}

/// Learning rate of component `tag` at `step`, 0 <= step <= total_steps.
///
/// Linear warmup from zero to the component's own start rate over the first
/// W steps, then a cosine from start to end over the remaining T - W steps.
inline double lr_at(const ScheduleSpec& spec, const RelativeRates& rates, ComponentTag tag, std::size_t step) {
  if (step > spec.total_steps)
    throw DomainError("step " + std::to_string(step) + " outside [0, " + std::to_string(spec.total_steps) + "]");
  const auto [start, end] = endpoint_lrs(spec, rates, tag);
  const std::size_t warmup = spec.warmup_steps();
  if (step < warmup) return start * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(spec.total_steps - warmup);
  return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * progress));
}

enum class PresetKind { Moe, Dense };

/// Tuned relative rates shipped with the library.
inline RelativeRates preset(PresetKind kind) {
  RelativeRates r;
  if (kind == PresetKind::Moe) {
    r.per_component = {{ComponentTag::Embedding, {5.0, 0.6}},
                       {ComponentTag::Unembedding, {0.6, 0.4}},
                       {ComponentTag::Router, {0.6, 1.0}},
                       {ComponentTag::Experts, {0.3, 1.125}},
                       {ComponentTag::Attention, {1.0, 1.0}}};
  } else {
    r.per_component = {{ComponentTag::Embedding, {5.0, 0.6}},
                       {ComponentTag::Unembedding, {1.0, 0.4}},
                       {ComponentTag::FeedForward, {1.0, 0.6}},
                       {ComponentTag::Attention, {1.0, 0.2}}};
  }
  return r;
}

}  // namespace rlrs

#endif  // RLRS_SCHEDULE_HPP
