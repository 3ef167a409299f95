#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"

namespace dstrack {

/// Additive process noise w^i_t (agent index 0-based, t 1-based).
using Disturbance = std::function<Vec(std::size_t agent, int t)>;

struct ControllerInfo
{
  std::string controller = "lqr";  ///< "lqr" or "rhc"
  std::string decomposition;       ///< lqr only: "exact" or "relaxed"
  std::optional<int> horizon;      ///< rhc prediction horizon H
  std::optional<double> lambda;
  std::optional<std::string> regime;
  std::optional<double> rho;  ///< protection level when an attack was applied
  bool noise = false;
  /// Controller synthesized on the noise-free model while noise is present and the
  /// controller is constrained (not exactly optimal).
  bool certainty_equivalence_approximation = false;
};

/// Smallest slack to each family of box constraints over a run; negative means violated.
struct ConstraintMargins
{
  double local_state = std::numeric_limits<double>::infinity();
  double local_action = std::numeric_limits<double>::infinity();
  double deep_state = std::numeric_limits<double>::infinity();
  double deep_action = std::numeric_limits<double>::infinity();

  double min_margin() const { return std::min({local_state, local_action, deep_state, deep_action}); }
  double max_violation() const { return std::max(0.0, -min_margin()); }
};

/// Closed-loop record. Outer index is time (t = 1..T stored at t-1), inner index is agent.
struct TrajectoryLog
{
  int horizon = 0;
  int state_dim = 0;
  int action_dim = 0;
  std::size_t agents = 0;

  std::vector<std::vector<Vec>> states;
  std::vector<std::vector<Vec>> actions;
  std::vector<Vec> deep_states;
  std::vector<Vec> deep_actions;
  std::vector<double> stage_costs;
  std::vector<double> cumulative_costs;

  std::optional<ConstraintMargins> margins;
  double wall_clock_seconds = 0.0;
  ControllerInfo info;

  double total_cost() const { return cumulative_costs.empty() ? 0.0 : cumulative_costs.back(); }
};

/// Allocates a log and fills in the initial states.
inline TrajectoryLog start_log(const SystemModel & model, const Population & pop)
{
  TrajectoryLog log;
  log.horizon = model.horizon();
  log.state_dim = model.state_dim();
  log.action_dim = model.action_dim();
  log.agents = pop.size();
  log.states.assign(log.horizon, {});
  log.actions.assign(log.horizon, {});
  for (const auto & a : pop.agents()) { log.states[0].push_back(a.initial_state); }
  return log;
}

/// Computes deep states/actions and the per-step and cumulative team cost from the raw columns.
inline void finalize_costs(TrajectoryLog & log, const CostWeights & w, const Population & pop)
{
  log.deep_states.clear();
  log.deep_actions.clear();
  log.stage_costs.clear();
  log.cumulative_costs.clear();
  double total = 0.0;
  for (int t = 1; t <= log.horizon; ++t) {
    const auto & xs = log.states[t - 1];
    const auto & us = log.actions[t - 1];
    log.deep_states.push_back(deep_state(pop, xs));
    log.deep_actions.push_back(deep_action(pop, us));
    const double c = per_step_cost(w, pop, xs, us, t);
    total += c;
    log.stage_costs.push_back(c);
    log.cumulative_costs.push_back(total);
  }
}

namespace detail {

inline double box_margin(const Vec & v, const Vec & lo, const Vec & hi)
{
  return std::min((v - lo).minCoeff(), (hi - v).minCoeff());
}

}  // namespace detail

/// Margins of every logged state/action and aggregate against the original box bounds.
inline ConstraintMargins constraint_margins(const TrajectoryLog & log, const BoxBounds & bounds)
{
  ConstraintMargins m;
  for (int k = 0; k < log.horizon; ++k) {
    for (std::size_t i = 0; i < log.agents; ++i) {
      m.local_state = std::min(m.local_state, detail::box_margin(log.states[k][i], bounds.a, bounds.b));
      m.local_action = std::min(m.local_action, detail::box_margin(log.actions[k][i], bounds.c, bounds.d));
    }
    m.deep_state = std::min(m.deep_state, detail::box_margin(log.deep_states[k], bounds.abar, bounds.bbar));
    m.deep_action = std::min(m.deep_action, detail::box_margin(log.deep_actions[k], bounds.cbar, bounds.dbar));
  }
  return m;
}

}  // namespace dstrack
