#pragma once

/**
 * @file
 * @brief Distributed receding-horizon control: n local window QPs in gauge coordinates
 * plus one global window QP on the aggregate, with box bounds chosen so that the
 * recombined actions respect the original local and aggregate boxes.
 */

#include <chrono>
#include <string>
#include <vector>

#include "core.hpp"
#include "qp.hpp"
#include "trajectory.hpp"

namespace dstrack {

enum class BoundRegime { PositiveFactors, SignedFactors };

inline const char * to_string(BoundRegime r) { return r == BoundRegime::PositiveFactors ? "positive" : "signed"; }

struct StateInputBox
{
  Vec state_lo, state_hi;
  Vec input_lo, input_hi;
};

struct RhcBoundSet
{
  double lambda = 0.5;
  BoundRegime regime = BoundRegime::PositiveFactors;
  std::vector<StateInputBox> local;  ///< one per agent
  StateInputBox global;
  BoxBounds originals;
};

namespace detail {

inline void check_lambda(double lambda)
{
  if (!(lambda > 0.0 && lambda < 1.0)) { throw AssumptionError("lambda must lie strictly between 0 and 1"); }
}

}  // namespace detail

/// Bounds for factors in (0,1] with α_i ≤ γ_i. The global box is (1−λ) times the effective aggregate
/// box max(ᾱa, ā)..min(ᾱb, b̄); every local box is λ/(1−λ) times the global one.
inline RhcBoundSet build_bounds_positive(const BoxBounds & bounds, const Population & pop, double lambda)
{
  detail::check_lambda(lambda);
  bounds.validate(static_cast<int>(bounds.a.size()), static_cast<int>(bounds.c.size()));
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const auto & ag = pop[i];
    const std::string id = "agent " + std::to_string(i + 1);
    if (!(ag.alpha > 0.0 && ag.alpha <= 1.0)) {
      throw AssumptionError(id + ": positive-factor bounds need alpha in (0, 1], got " + std::to_string(ag.alpha));
    }
    if (ag.alpha > ag.gamma) { throw AssumptionError(id + ": positive-factor bounds need alpha <= gamma"); }
  }
  const double abar = pop.mean_alpha();
  RhcBoundSet out;
  out.lambda = lambda;
  out.regime = BoundRegime::PositiveFactors;
  out.originals = bounds;
  out.global.state_lo = (1.0 - lambda) * (abar * bounds.a).cwiseMax(bounds.abar);
  out.global.state_hi = (1.0 - lambda) * (abar * bounds.b).cwiseMin(bounds.bbar);
  out.global.input_lo = (1.0 - lambda) * (abar * bounds.c).cwiseMax(bounds.cbar);
  out.global.input_hi = (1.0 - lambda) * (abar * bounds.d).cwiseMin(bounds.dbar);
  const double k = lambda / (1.0 - lambda);
  const StateInputBox local{k * out.global.state_lo, k * out.global.state_hi, k * out.global.input_lo,
                            k * out.global.input_hi};
  out.local.assign(pop.size(), local);
  return out;
}

/// Symmetric magnitude m with [−m, m] inside both [lo, hi] and [lobar, hibar], element-wise.
inline Vec symmetric_margin(const Vec & lo, const Vec & hi, const Vec & lobar, const Vec & hibar)
{
  const Vec upper = hi.cwiseMin(hibar);
  const Vec lower = lo.cwiseMax(lobar);
  Vec m(upper.size());
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    // at an exact tie both cases give the same magnitude
    m[k] = upper[k] + lower[k] <= 0.0 ? upper[k] : -lower[k];
  }
  return m;
}

/// Bounds for factors in [−1,1] with |α_i| ≤ γ_i: symmetric boxes λm and (1−λ)m.
inline RhcBoundSet build_bounds_signed(const BoxBounds & bounds, const Population & pop, double lambda)
{
  detail::check_lambda(lambda);
  bounds.validate(static_cast<int>(bounds.a.size()), static_cast<int>(bounds.c.size()));
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const auto & ag = pop[i];
    const std::string id = "agent " + std::to_string(i + 1);
    if (!(ag.alpha >= -1.0 && ag.alpha <= 1.0)) {
      throw AssumptionError(id + ": signed-factor bounds need alpha in [-1, 1], got " + std::to_string(ag.alpha));
    }
    if (std::abs(ag.alpha) > ag.gamma) { throw AssumptionError(id + ": signed-factor bounds need |alpha| <= gamma"); }
  }
  const Vec mx = symmetric_margin(bounds.a, bounds.b, bounds.abar, bounds.bbar);
  const Vec mu_ = symmetric_margin(bounds.c, bounds.d, bounds.cbar, bounds.dbar);
  RhcBoundSet out;
  out.lambda = lambda;
  out.regime = BoundRegime::SignedFactors;
  out.originals = bounds;
  out.global = {-(1.0 - lambda) * mx, (1.0 - lambda) * mx, -(1.0 - lambda) * mu_, (1.0 - lambda) * mu_};
  out.local.assign(pop.size(), StateInputBox{-lambda * mx, lambda * mx, -lambda * mu_, lambda * mu_});
  return out;
}

inline RhcBoundSet build_bounds(const BoxBounds & bounds, const Population & pop, double lambda, BoundRegime regime)
{
  return regime == BoundRegime::PositiveFactors ? build_bounds_positive(bounds, pop, lambda)
                                                : build_bounds_signed(bounds, pop, lambda);
}

struct RhcSettings
{
  int horizon = 10;  ///< prediction horizon H (window t..t+H, clipped at T)
  double lambda = 0.5;
  BoundRegime regime = BoundRegime::PositiveFactors;
  QpSettings qp;
  bool warm_start = true;
};

/// Closed-loop distributed RHC for one scenario.
///
/// The gauge is anchored on the aggregate state predicted by the global controller, ȳ, with
/// ȳ_1 = x̄_1 and ȳ_{t+1} = A_t ȳ_t + B_t v̄_t. Agent i works on Δy^i = x^i − (α_i/γ_i)ȳ, which then
/// evolves exactly as its own window model predicts, and applies u^i = Δv^i + (α_i/γ_i)v̄.
class DistributedRhc
{
public:
  DistributedRhc(SystemModel model, CostWeights weights, Population pop, const BoxBounds & bounds,
                 RhcSettings settings)
      : model_(std::move(model)), w_(std::move(weights)), pop_(std::move(pop)), settings_(std::move(settings))
  {
    pop_.check_compatible(model_);
    w_.check_compatible(model_);
    if (settings_.horizon < 1) { throw InputError("RHC prediction horizon must be at least 1"); }
    mu_ = mu(pop_);
    w_.validate(mu_);
    for (int t = 1; t <= model_.horizon(); ++t) {
      if (detail::min_eigenvalue((2.0 - mu_) * w_.Q(t)) < -1e-10) {
        throw AssumptionError("RHC global problem is not convex: (2-mu)Q_t indefinite at t=" + std::to_string(t)
                              + " (mu=" + std::to_string(mu_) + ")");
      }
    }
    bounds_ = build_bounds(bounds, pop_, settings_.lambda, settings_.regime);
    if (bounds_.global.state_lo.size() != model_.state_dim() || bounds_.global.input_lo.size() != model_.action_dim()) {
      throw InputError("bound dimensions do not match the dynamics");
    }
    for (const auto & a : pop_.agents()) { ratio_.push_back(a.alpha / a.gamma); }
    const int T = model_.horizon();
    for (int t = 1; t <= T; ++t) { rbar_.push_back(deep_state(pop_, references_at(pop_, t))); }
    dr_.resize(pop_.size());
    for (std::size_t i = 0; i < pop_.size(); ++i) {
      for (int t = 1; t <= T; ++t) { dr_[i].push_back(pop_[i].reference[t - 1] - ratio_[i] * rbar_[t - 1]); }
    }
    warm_.resize(pop_.size() + 1);
  }

  const RhcBoundSet & bounds() const noexcept { return bounds_; }
  double coupling_mu() const noexcept { return mu_; }
  const std::vector<double> & ratios() const noexcept { return ratio_; }
  const std::vector<Vec> & deep_reference() const noexcept { return rbar_; }
  const std::vector<Vec> & delta_reference(std::size_t agent) const { return dr_.at(agent); }

  /// First-stage input of agent i's window QP from gauge state Δy at time t (t < T).
  Vec local_step(std::size_t agent, const Vec & dy, int t)
  {
    if (agent >= pop_.size()) { throw InputError("local_step: agent index out of range"); }
    const int last = window_end(t);
    std::vector<StageCost> stages;
    for (int tau = t; tau <= last; ++tau) { stages.push_back(tracking_stage(w_.Q(tau), dr_[agent][tau - 1], w_.R(tau))); }
    const auto & box = bounds_.local[agent];
    return solve_window(agent, t, last, dy, stages, box, "local problem of agent " + std::to_string(agent + 1));
  }

  /// First-stage aggregate input of the global window QP from aggregate state ȳ at time t (t < T).
  Vec global_step(const Vec & ybar, int t)
  {
    const int last = window_end(t);
    std::vector<StageCost> stages;
    for (int tau = t; tau <= last; ++tau) {
      const Mat Qt = (2.0 - mu_) * w_.Q(tau);
      const Vec & r = rbar_[tau - 1];
      const Vec & s = w_.s(tau);
      stages.push_back({Qt + w_.Qbar(tau), Qt * r + w_.Qbar(tau) * s, quad(r, Qt) + quad(s, w_.Qbar(tau)),
                        w_.Rbold(tau, mu_)});
    }
    return solve_window(pop_.size(), t, last, ybar, stages, bounds_.global, "global problem");
  }

  TrajectoryLog rollout(const Disturbance & noise = {})
  {
    const auto start = std::chrono::steady_clock::now();
    for (auto & w : warm_) { w = {}; }
    TrajectoryLog log = start_log(model_, pop_);
    const int T = model_.horizon();
    const Vec zero_u = Vec::Zero(model_.action_dim());
    Vec ybar = deep_state(pop_, log.states[0]);
    for (int t = 1; t <= T; ++t) {
      const auto & xs = log.states[t - 1];
      auto & us = log.actions[t - 1];
      if (t == T) {
        us.assign(pop_.size(), zero_u);
        break;
      }
      const Vec vbar = global_step(ybar, t);
      for (std::size_t i = 0; i < pop_.size(); ++i) {
        const Vec dv = local_step(i, xs[i] - ratio_[i] * ybar, t);
        us.push_back(dv + ratio_[i] * vbar);
      }
      auto & next = log.states[t];
      for (std::size_t i = 0; i < pop_.size(); ++i) {
        Vec x = model_.step(t, xs[i], us[i]);
        if (noise) { x += noise(i, t); }
        next.push_back(std::move(x));
      }
      ybar = model_.step(t, ybar, vbar);
    }
    finalize_costs(log, w_, pop_);
    log.margins = constraint_margins(log, bounds_.originals);
    log.info.controller = "rhc";
    log.info.horizon = settings_.horizon;
    log.info.lambda = settings_.lambda;
    log.info.regime = to_string(settings_.regime);
    log.info.noise = static_cast<bool>(noise);
    log.info.certainty_equivalence_approximation = static_cast<bool>(noise);
    log.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return log;
  }

private:
  int window_end(int t) const
  {
    if (t < 1 || t >= model_.horizon()) {
      throw InputError("RHC step needs 1 <= t < T, got t=" + std::to_string(t));
    }
    return std::min(t + settings_.horizon, model_.horizon());
  }

  /// Shifts the previous window solution forward by one stage, padding with zeros.
  QpWarmStart shifted(const QpWarmStart & prev, int prev_stages, int stages) const
  {
    const int du = model_.action_dim();
    const int dx = model_.state_dim();
    const int m = stages * du;
    const int ns = stages * dx;
    QpWarmStart ws{Vec::Zero(m), Vec::Zero(m + ns)};
    const int pm = prev_stages * du;
    const int keep = std::min(stages, prev_stages - 1);
    if (keep <= 0) { return ws; }
    ws.z.head(keep * du) = prev.z.segment(du, keep * du);
    ws.y.head(keep * du) = prev.y.segment(du, keep * du);
    ws.y.segment(m, keep * dx) = prev.y.segment(pm + dx, keep * dx);
    return ws;
  }

  Vec solve_window(std::size_t slot, int t, int last, const Vec & y0, const std::vector<StageCost> & stages,
                   const StateInputBox & box, const std::string & what)
  {
    CondensedWindow cw;
    try {
      cw = condense(model_, t, last, y0, stages, box.state_lo, box.state_hi, box.input_lo, box.input_hi);
    } catch (const RootInfeasibleError &) {
      throw RootInfeasibleError(what + ": window start state left its box at t=" + std::to_string(t), t);
    }
    const int N = last - t;
    auto & slot_warm = warm_[slot];
    QpSolution sol;
    if (settings_.warm_start && slot_warm.stages > 0) {
      const QpWarmStart ws = shifted(slot_warm.start, slot_warm.stages, N);
      sol = solve(cw.qp, settings_.qp, &ws);
    } else {
      sol = solve(cw.qp, settings_.qp);
    }
    if (sol.status == QpStatus::Infeasible) {
      throw InfeasibleError(what + ": window QP infeasible at t=" + std::to_string(t), t);
    }
    if (sol.status != QpStatus::Solved && sol.primal_residual > 1e-6) {
      throw InfeasibleError(what + ": window QP did not converge at t=" + std::to_string(t)
                              + " (primal residual " + std::to_string(sol.primal_residual) + ")",
                            t);
    }
    slot_warm.start = {sol.z, sol.y};
    slot_warm.stages = N;
    return sol.z.head(model_.action_dim());
  }

  struct WarmSlot
  {
    QpWarmStart start;
    int stages = 0;
  };

  SystemModel model_;
  CostWeights w_;
  Population pop_;
  RhcSettings settings_;
  RhcBoundSet bounds_;
  double mu_ = 1.0;
  std::vector<double> ratio_;
  std::vector<Vec> rbar_;
  std::vector<std::vector<Vec>> dr_;
  std::vector<WarmSlot> warm_;  ///< n local slots then the global one
};

inline TrajectoryLog rhc_rollout(const SystemModel & model, const CostWeights & w, const Population & pop,
                                 const BoxBounds & bounds, const RhcSettings & settings, const Disturbance & noise = {})
{
  DistributedRhc rhc(model, w, pop, bounds, settings);
  return rhc.rollout(noise);
}

}  // namespace dstrack
