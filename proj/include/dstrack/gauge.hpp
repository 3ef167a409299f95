#pragma once

/**
 * @file
 * @brief Gauge change of coordinates Δx^i = x^i − (α_i/γ_i) x̄ and the matching
 * split of the per-step team cost into n local terms and one global term.
 */

#include <span>
#include <vector>

#include "core.hpp"

namespace dstrack {

/// Per-agent deviations from the scaled aggregates, together with the aggregates.
struct GaugeFrame
{
  std::vector<Vec> delta_states;
  std::vector<Vec> delta_actions;
  std::vector<Vec> delta_references;
  Vec deep_state;
  Vec deep_action;
  Vec deep_reference;
};

/// α_i / γ_i for every agent.
inline std::vector<double> gauge_ratios(const Population & pop)
{
  std::vector<double> out;
  out.reserve(pop.size());
  for (const auto & a : pop.agents()) { out.push_back(a.alpha / a.gamma); }
  return out;
}

namespace detail {

inline std::vector<Vec> shift_by(std::span<const double> ratios, std::span<const Vec> vs, const Vec & aggregate)
{
  std::vector<Vec> out;
  out.reserve(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) { out.push_back(vs[i] - ratios[i] * aggregate); }
  return out;
}

inline std::vector<Vec> unshift_by(std::span<const double> ratios, std::span<const Vec> vs, const Vec & aggregate)
{
  std::vector<Vec> out;
  out.reserve(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) { out.push_back(vs[i] + ratios[i] * aggregate); }
  return out;
}

}  // namespace detail

inline GaugeFrame to_gauge(const Population & pop, std::span<const Vec> states, std::span<const Vec> actions,
                           std::span<const Vec> references)
{
  if (states.size() != pop.size() || actions.size() != pop.size() || references.size() != pop.size()) {
    throw InputError("to_gauge: expected one state, action and reference per agent");
  }
  const auto ratios = gauge_ratios(pop);
  GaugeFrame f;
  f.deep_state = deep_state(pop, states);
  f.deep_action = deep_action(pop, actions);
  f.deep_reference = deep_state(pop, references);
  f.delta_states = detail::shift_by(ratios, states, f.deep_state);
  f.delta_actions = detail::shift_by(ratios, actions, f.deep_action);
  f.delta_references = detail::shift_by(ratios, references, f.deep_reference);
  return f;
}

/// States and actions recovered from a frame.
struct JointSample
{
  std::vector<Vec> states;
  std::vector<Vec> actions;
};

inline JointSample from_gauge(const Population & pop, const GaugeFrame & frame)
{
  if (frame.delta_states.size() != pop.size() || frame.delta_actions.size() != pop.size()) {
    throw InputError("from_gauge: frame does not match population size");
  }
  const auto ratios = gauge_ratios(pop);
  return {detail::unshift_by(ratios, frame.delta_states, frame.deep_state),
          detail::unshift_by(ratios, frame.delta_actions, frame.deep_action)};
}

/// Team cost at step t evaluated in gauge coordinates:
/// (1/n)Σγ_i(‖Δx^i−Δr^i‖_Q + ‖Δu^i‖_R) + ‖x̄−s‖_Q̄ + (2−μ)‖x̄−r̄‖_Q + ‖ū‖_R̄ + (2−μ)‖ū‖_R.
/// Equal to per_step_cost for any frame produced by to_gauge.
inline double decomposed_step_cost(const CostWeights & w, const Population & pop, const GaugeFrame & frame, int t,
                                   double mu)
{
  const Mat & Q = w.Q(t);
  const Mat & R = w.R(t);
  double local = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    local += pop[i].gamma
           * (quad(frame.delta_states[i] - frame.delta_references[i], Q) + quad(frame.delta_actions[i], R));
  }
  local /= static_cast<double>(pop.size());
  const Vec track = frame.deep_state - frame.deep_reference;
  return local + quad(frame.deep_state - w.s(t), w.Qbar(t)) + (2.0 - mu) * quad(track, Q)
       + quad(frame.deep_action, w.Rbar(t)) + (2.0 - mu) * quad(frame.deep_action, R) + w.offset(t);
}

}  // namespace dstrack
