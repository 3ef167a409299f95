#pragma once

/**
 * @file
 * @brief Scenario engine: configuration, closed-loop runs (LQR or distributed RHC, optionally
 * with additive Gaussian noise), run metrics and the built-in Example 1 scenarios.
 */

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "attacks.hpp"
#include "core.hpp"
#include "lqr.hpp"
#include "rhc.hpp"
#include "trajectory.hpp"

namespace dstrack {

enum class ControllerKind { Lqr, Rhc };

inline const char * to_string(ControllerKind k) { return k == ControllerKind::Lqr ? "lqr" : "rhc"; }

struct ControllerSpec
{
  ControllerKind kind = ControllerKind::Lqr;
  Decomposition decomposition = Decomposition::Exact;  ///< LQR only
  int horizon = 10;                                    ///< RHC only
  double lambda = 0.5;                                 ///< RHC only
  BoundRegime regime = BoundRegime::PositiveFactors;   ///< RHC only

  bool operator==(const ControllerSpec &) const = default;
};

/// i.i.d. zero-mean Gaussian process noise with per-dimension standard deviation.
struct NoiseSpec
{
  Vec stddev;
  std::uint64_t seed = 0;

  bool operator==(const NoiseSpec & o) const { return detail::same(stddev, o.stddev) && seed == o.seed; }
};

struct ScenarioConfig
{
  std::string name = "scenario";
  SystemModel model;
  CostWeights weights;
  Population population;  ///< factors before any attack
  /// γ_i is set to the (attacked) factor α_i when the scenario is built.
  bool gamma_follows_alpha = false;
  ControllerSpec controller;
  std::optional<BoxBounds> bounds;
  std::optional<AttackSpec> attack;
  std::optional<NoiseSpec> noise;
  /// Point the final tracking error is measured against. Defaults to s_T; set it when the
  /// weights were rewritten so that s is no longer the physical target.
  std::optional<Vec> target;

  Vec tracking_target() const { return target ? *target : weights.s(weights.horizon()); }

  bool operator==(const ScenarioConfig & o) const
  {
    const bool same_target = target.has_value() == o.target.has_value() && (!target || detail::same(*target, *o.target));
    return name == o.name && model == o.model && weights == o.weights && population == o.population
        && gamma_follows_alpha == o.gamma_follows_alpha && controller == o.controller && bounds == o.bounds
        && attack == o.attack && noise == o.noise && same_target;
  }
};

/// The population the controller sees: attack applied, then γ tied to α if requested.
inline Population effective_population(const ScenarioConfig & cfg)
{
  Population pop = cfg.attack ? apply_attack(cfg.population, *cfg.attack) : cfg.population;
  if (!cfg.gamma_follows_alpha) { return pop; }
  auto agents = pop.agents();
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!(agents[i].alpha > 0.0)) {
      throw AssumptionError("gamma follows alpha, but agent " + std::to_string(i + 1)
                            + " has non-positive factor " + std::to_string(agents[i].alpha));
    }
    agents[i].gamma = agents[i].alpha;
  }
  return Population(std::move(agents));
}

inline RhcSettings rhc_settings(const ControllerSpec & c)
{
  RhcSettings s;
  s.horizon = c.horizon;
  s.lambda = c.lambda;
  s.regime = c.regime;
  return s;
}

/// Semantic checks for a whole scenario. Throws InputError/AssumptionError with a readable reason.
inline void validate(const ScenarioConfig & cfg)
{
  cfg.population.check_compatible(cfg.model);
  cfg.weights.check_compatible(cfg.model);
  if (cfg.controller.kind == ControllerKind::Rhc && !cfg.bounds) { throw InputError("RHC requires bounds"); }
  if (cfg.controller.kind == ControllerKind::Lqr && cfg.bounds) {
    throw InputError("LQR controller is unconstrained and does not accept bounds");
  }
  if (cfg.noise) {
    if (cfg.noise->stddev.size() != cfg.model.state_dim()) { throw InputError("noise stddev dimension mismatch"); }
    if (!cfg.noise->stddev.allFinite() || cfg.noise->stddev.minCoeff() < 0.0) {
      throw InputError("noise stddev must be non-negative");
    }
  }
  if (cfg.target && cfg.target->size() != cfg.model.state_dim()) { throw InputError("target dimension mismatch"); }
  const Population pop = effective_population(cfg);
  cfg.weights.validate(mu(pop));
  if (cfg.controller.kind == ControllerKind::Rhc) {
    cfg.bounds->validate(cfg.model.state_dim(), cfg.model.action_dim());
    DistributedRhc probe(cfg.model, cfg.weights, pop, *cfg.bounds, rhc_settings(cfg.controller));
    (void)probe;
  }
}

namespace detail {

/// Noise table drawn up front in (t, agent, dim) order so the sequence does not depend on
/// the order in which the controller queries it.
inline Disturbance gaussian_noise(const NoiseSpec & spec, std::size_t agents, int horizon)
{
  std::mt19937_64 gen(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto table = std::make_shared<std::vector<Vec>>();
  table->reserve(agents * static_cast<std::size_t>(horizon));
  for (int t = 1; t <= horizon; ++t) {
    for (std::size_t i = 0; i < agents; ++i) {
      Vec w(spec.stddev.size());
      for (Eigen::Index k = 0; k < w.size(); ++k) { w[k] = spec.stddev[k] * normal(gen); }
      table->push_back(std::move(w));
    }
  }
  return [table, agents](std::size_t agent, int t) -> Vec {
    return (*table)[static_cast<std::size_t>(t - 1) * agents + agent];
  };
}

}  // namespace detail

inline TrajectoryLog run(const ScenarioConfig & cfg)
{
  validate(cfg);
  const Population pop = effective_population(cfg);
  Disturbance noise;
  if (cfg.noise) { noise = detail::gaussian_noise(*cfg.noise, pop.size(), cfg.model.horizon()); }
  TrajectoryLog log;
  if (cfg.controller.kind == ControllerKind::Lqr) {
    log = rollout_lqr(cfg.model, cfg.weights, pop, cfg.controller.decomposition, noise);
  } else {
    log = rhc_rollout(cfg.model, cfg.weights, pop, *cfg.bounds, rhc_settings(cfg.controller), noise);
  }
  if (cfg.attack) { log.info.rho = cfg.attack->rho; }
  return log;
}

struct MetricsReport
{
  double final_tracking_error = 0.0;     ///< ‖x̄_T − target‖₂
  double max_constraint_violation = 0.0;  ///< against the original boxes, 0 without bounds
  double total_cost = 0.0;
  std::vector<double> max_deviation_from_center;  ///< per agent, max_t ‖x^i_t − x̄_t‖₂
};

inline MetricsReport metrics(const TrajectoryLog & log, const ScenarioConfig & cfg)
{
  MetricsReport m;
  const int T = log.horizon;
  m.final_tracking_error = (log.deep_states[T - 1] - cfg.tracking_target()).norm();
  if (log.margins) { m.max_constraint_violation = log.margins->max_violation(); }
  m.total_cost = log.total_cost();
  m.max_deviation_from_center.assign(log.agents, 0.0);
  for (int k = 0; k < T; ++k) {
    for (std::size_t i = 0; i < log.agents; ++i) {
      m.max_deviation_from_center[i] =
          std::max(m.max_deviation_from_center[i], (log.states[k][i] - log.deep_states[k]).norm());
    }
  }
  return m;
}

// ---------------------------------------------------------------------------------------------
// Example 1: 100 planar robots, x_{t+1} = x_t + u_t, steering their center of mass to (2, 2).

enum class Example1Variant { Unconstrained, Constrained, Attacked };

inline const char * to_string(Example1Variant v)
{
  switch (v) {
    case Example1Variant::Unconstrained: return "unconstrained";
    case Example1Variant::Constrained: return "constrained";
    case Example1Variant::Attacked: return "attacked";
  }
  return "?";
}

struct Example1Parameters
{
  int agents = 100;
  int horizon = 100;
  Mat Q = Eigen::Vector2d(5.0, 50.0).asDiagonal();
  Mat R = Eigen::Vector2d(100.0, 100.0).asDiagonal();
  Mat Qbar = Mat::Identity(2, 2);  ///< weight on ‖x̄ − s‖
  Vec target = Eigen::Vector2d(2.0, 2.0);
  double initial_spread = 0.5;  ///< initial states uniform in [−spread, spread]²
  std::uint64_t seed = 42;
  double action_limit = 0.2;
  double state_limit = 1e3;
  int rhc_horizon = 10;
  double lambda = 0.5;
  double rho = 0.9;
  std::size_t attacked_agent = 0;
};

/// Native Example 1 stage cost (1/n)Σ α_i(‖x^i − x̄‖_Q + ‖u^i‖_R) + ‖x̄ − s‖_Q̄.
inline double example1_native_step_cost(const Example1Parameters & p, const Population & pop,
                                        std::span<const Vec> states, std::span<const Vec> actions)
{
  const Vec xbar = deep_state(pop, states);
  double local = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    local += pop[i].alpha * (quad(states[i] - xbar, p.Q) + quad(actions[i], p.R));
  }
  return local / static_cast<double>(pop.size()) + quad(xbar - p.target, p.Qbar);
}

/// Canonical weights for the native cost with γ_i = α_i and factors averaging to one: the
/// local term tracks zero with Q, and the global weight −Q + Q̄ tracks a shifted target.
inline CostWeights example1_weights(const Example1Parameters & p)
{
  const Mat shift = reformulate_weighted_tracking(p.Q, Mat::Identity(2, 2));
  const auto term = combine_tracking_terms(shift, Vec::Zero(2), p.Qbar, p.target);
  const auto T = static_cast<std::size_t>(p.horizon);
  return CostWeights(std::vector<Mat>(T, p.Q), std::vector<Mat>(T, p.R), std::vector<Mat>(T, term.weight),
                     std::vector<Mat>(T, Mat::Zero(2, 2)), std::vector<Vec>(T, term.target),
                     std::vector<double>(T, term.offset));
}

inline Population example1_population(const Example1Parameters & p)
{
  std::mt19937_64 gen(p.seed);
  std::uniform_real_distribution<double> unif(-p.initial_spread, p.initial_spread);
  std::vector<AgentProfile> agents;
  for (int i = 0; i < p.agents; ++i) {
    AgentProfile a;
    a.alpha = 1.0;
    a.gamma = 1.0;
    a.reference.assign(p.horizon, Vec::Zero(2));
    a.initial_state = Vec(2);
    a.initial_state[0] = unif(gen);
    a.initial_state[1] = unif(gen);
    agents.push_back(std::move(a));
  }
  return Population(std::move(agents));
}

inline ScenarioConfig example1_config(Example1Variant variant, const Example1Parameters & p = {})
{
  ScenarioConfig cfg;
  cfg.name = std::string("example1_") + to_string(variant);
  cfg.model = SystemModel::time_invariant(p.horizon, Mat::Identity(2, 2), Mat::Identity(2, 2));
  cfg.weights = example1_weights(p);
  cfg.population = example1_population(p);
  cfg.gamma_follows_alpha = true;
  cfg.target = p.target;
  if (variant == Example1Variant::Constrained) {
    cfg.controller.kind = ControllerKind::Rhc;
    cfg.controller.horizon = p.rhc_horizon;
    cfg.controller.lambda = p.lambda;
    const Vec xs = Vec::Constant(2, p.state_limit);
    const Vec us = Vec::Constant(2, p.action_limit);
    cfg.bounds = BoxBounds{-xs, xs, -us, us, -xs, xs, -us, us};
  }
  if (variant == Example1Variant::Attacked) {
    AttackSpec a;
    a.kind = AttackKind::ProtectedMechanism;
    a.z.assign(p.agents, 0.0);
    a.z.at(p.attacked_agent) = 1.0;
    a.rho = p.rho;
    cfg.attack = a;
  }
  return cfg;
}

}  // namespace dstrack
