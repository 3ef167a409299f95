#pragma once

/**
 * @file
 * @brief Unconstrained team optimal control by decomposition into n local and one
 * global LQ tracking problem, each solved by a backward Riccati recursion.
 *
 * Two decompositions are provided. Both shift agent i by κ_i x̄ and solve a global
 * problem on x̄ with state/input weights ωQ + Q̄ and ωR + R̄:
 *
 *  - Exact:   κ_i = α_i/(γ_i μ), ω = 1/μ. The shifted coordinates satisfy
 *             (1/n)Σ α_i Δx^i = 0 identically, so the n+1 subproblems are independent
 *             and the recombined strategy is the team optimum for every μ > 0.
 *  - Relaxed: κ_i = α_i/γ_i,     ω = 2−μ. Same formulas as the gauge module. The
 *             subproblems ignore the coupling (1/n)Σ α_i Δu^i = (1−μ)ū, so the strategy
 *             is optimal only when μ = 1 (where both decompositions coincide).
 */

#include <chrono>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "trajectory.hpp"

namespace dstrack {

enum class Decomposition { Exact, Relaxed };

inline const char * to_string(Decomposition d) { return d == Decomposition::Exact ? "exact" : "relaxed"; }

/// Gauge scale and global weight for a given μ.
struct Coupling
{
  double mu = 1.0;
  Decomposition kind = Decomposition::Exact;

  /// κ_i = gauge_scale() · α_i/γ_i
  double gauge_scale() const
  {
    if (kind == Decomposition::Relaxed) { return 1.0; }
    return mu > 0.0 ? 1.0 / mu : 0.0;
  }

  /// ω in the global weights ωQ + Q̄, ωR + R̄
  double global_weight() const
  {
    // μ = 0 means every factor is zero; the global problem then has no effect and any
    // weight keeping it convex will do.
    if (kind == Decomposition::Relaxed || mu <= 0.0) { return 2.0 - mu; }
    return 1.0 / mu;
  }
};

/// Feedback gains of one finite-horizon LQ problem over stages first..first+N−1.
struct LqGains
{
  int first = 1;
  std::vector<Mat> P;      ///< N value matrices
  std::vector<Mat> theta;  ///< N−1 state-feedback gains
  std::vector<Mat> L;      ///< N−1 correction gains (BᵀPB+R)⁻¹Bᵀ
};

namespace detail {

/// Solves (BᵀPB + R) X = rhs by Cholesky, rejecting ill-conditioned systems.
inline Mat spd_solve(const Mat & S, const Mat & rhs, int t)
{
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    throw InputError("B'PB + R is singular or ill-conditioned at t=" + std::to_string(t));
  }
  Eigen::LLT<Mat> llt(S);
  return llt.solve(rhs);
}

}  // namespace detail

/// Backward Riccati recursion P_t = W_t + AᵀPA − AᵀPB(BᵀPB+R)⁻¹BᵀPA from P_last = W_last.
/// `state_weights` has one entry per stage starting at `first`; `input_weights` at least one fewer.
inline LqGains solve_riccati(const SystemModel & model, int first, std::span<const Mat> state_weights,
                             std::span<const Mat> input_weights)
{
  const int N = static_cast<int>(state_weights.size());
  if (N < 1 || static_cast<int>(input_weights.size()) < N - 1) {
    throw InputError("solve_riccati: weight sequences too short");
  }
  if (first < 1 || first + N - 1 > model.horizon()) { throw InputError("solve_riccati: window outside horizon"); }
  LqGains g;
  g.first = first;
  g.P.resize(N);
  g.theta.resize(N - 1);
  g.L.resize(N - 1);
  g.P[N - 1] = state_weights[N - 1];
  for (int k = N - 2; k >= 0; --k) {
    const int t = first + k;
    const Mat & A = model.A(t);
    const Mat & B = model.B(t);
    const Mat & Pn = g.P[k + 1];
    const Mat S = B.transpose() * Pn * B + input_weights[k];
    const Mat K = detail::spd_solve(S, B.transpose(), t);  // (BᵀPB+R)⁻¹Bᵀ
    g.L[k] = K;
    g.theta[k] = -K * Pn * A;
    const Mat P = state_weights[k] + A.transpose() * Pn * (A + B * g.theta[k]);
    g.P[k] = 0.5 * (P + P.transpose());
  }
  return g;
}

/// Affine correction recursion q_k = (A + Bθ_k)ᵀ q_{k+1} + l_k from q_last = l_last.
inline std::vector<Vec> solve_affine(const SystemModel & model, const LqGains & gains, std::span<const Vec> linear)
{
  const int N = static_cast<int>(gains.P.size());
  if (static_cast<int>(linear.size()) != N) { throw InputError("solve_affine: linear term count mismatch"); }
  std::vector<Vec> q(N);
  q[N - 1] = linear[N - 1];
  for (int k = N - 2; k >= 0; --k) {
    const int t = gains.first + k;
    q[k] = (model.A(t) + model.B(t) * gains.theta[k]).transpose() * q[k + 1] + linear[k];
  }
  return q;
}

/// Local and global gain sequences over the full horizon.
struct RiccatiGains
{
  std::vector<Mat> P, Pbold;
  std::vector<Mat> theta, thetabar;
  std::vector<Mat> Lgain, Lbar;
};

inline RiccatiGains solve_riccati(const SystemModel & model, const CostWeights & w, double mu,
                                  Decomposition kind = Decomposition::Exact)
{
  w.check_compatible(model);
  w.validate(mu);
  const Coupling coupling{mu, kind};
  const double omega = coupling.global_weight();
  const int T = model.horizon();
  std::vector<Mat> Q, R, Qg, Rg;
  for (int t = 1; t <= T; ++t) {
    Q.push_back(w.Q(t));
    R.push_back(w.R(t));
    Qg.push_back(omega * w.Q(t) + w.Qbar(t));
    Rg.push_back(omega * w.R(t) + w.Rbar(t));
  }
  auto local = solve_riccati(model, 1, Q, R);
  auto global = solve_riccati(model, 1, Qg, Rg);
  return {std::move(local.P), std::move(global.P), std::move(local.theta), std::move(global.theta),
          std::move(local.L), std::move(global.L)};
}

/// Correction signals v^i (one sequence per agent) and v̄.
struct Corrections
{
  std::vector<std::vector<Vec>> v;
  std::vector<Vec> vbar;
};

/// v^i_t = (A+Bθ)ᵀv^i_{t+1} + Q_t Δr^i_t,  v̄_t = (A+Bθ̄)ᵀv̄_{t+1} + ωQ_t r̄_t + Q̄_t s_t.
inline Corrections solve_corrections(const SystemModel & model, const CostWeights & w, const Coupling & coupling,
                                     std::span<const std::vector<Vec>> delta_references, std::span<const Vec> rbar,
                                     const RiccatiGains & gains)
{
  const int T = model.horizon();
  if (static_cast<int>(rbar.size()) != T) { throw InputError("solve_corrections: rbar length mismatch"); }
  LqGains local{1, gains.P, gains.theta, gains.Lgain};
  LqGains global{1, gains.Pbold, gains.thetabar, gains.Lbar};
  Corrections out;
  out.v.reserve(delta_references.size());
  std::vector<Vec> lin(T);
  for (const auto & dr : delta_references) {
    if (static_cast<int>(dr.size()) != T) { throw InputError("solve_corrections: reference length mismatch"); }
    for (int t = 1; t <= T; ++t) { lin[t - 1] = w.Q(t) * dr[t - 1]; }
    out.v.push_back(solve_affine(model, local, lin));
  }
  const double omega = coupling.global_weight();
  for (int t = 1; t <= T; ++t) { lin[t - 1] = omega * (w.Q(t) * rbar[t - 1]) + w.Qbar(t) * w.s(t); }
  out.vbar = solve_affine(model, global, lin);
  return out;
}

/// Everything an agent needs to compute its action: gains, corrections, its gauge ratio.
struct RiccatiSolution
{
  Decomposition decomposition = Decomposition::Exact;
  double mu = 1.0;
  double global_weight = 1.0;
  std::vector<double> ratio;  ///< κ_i per agent

  std::vector<Mat> P, Pbold;
  std::vector<Mat> theta, thetabar;
  std::vector<Mat> Lgain, Lbar;
  std::vector<std::vector<Vec>> v;  ///< v[i][t-1]
  std::vector<Vec> vbar;            ///< vbar[t-1]
  std::vector<Vec> deep_reference;  ///< r̄_t
};

inline RiccatiSolution synthesize_lqr(const SystemModel & model, const CostWeights & w, const Population & pop,
                                      Decomposition kind = Decomposition::Exact)
{
  pop.check_compatible(model);
  const double m = mu(pop);
  const Coupling coupling{m, kind};
  auto gains = solve_riccati(model, w, m, kind);

  RiccatiSolution sol;
  sol.decomposition = kind;
  sol.mu = m;
  sol.global_weight = coupling.global_weight();
  for (const auto & a : pop.agents()) { sol.ratio.push_back(coupling.gauge_scale() * a.alpha / a.gamma); }

  const int T = model.horizon();
  for (int t = 1; t <= T; ++t) { sol.deep_reference.push_back(deep_state(pop, references_at(pop, t))); }
  std::vector<std::vector<Vec>> dr(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) {
    for (int t = 1; t <= T; ++t) { dr[i].push_back(pop[i].reference[t - 1] - sol.ratio[i] * sol.deep_reference[t - 1]); }
  }
  auto corr = solve_corrections(model, w, coupling, dr, sol.deep_reference, gains);

  sol.P = std::move(gains.P);
  sol.Pbold = std::move(gains.Pbold);
  sol.theta = std::move(gains.theta);
  sol.thetabar = std::move(gains.thetabar);
  sol.Lgain = std::move(gains.Lgain);
  sol.Lbar = std::move(gains.Lbar);
  sol.v = std::move(corr.v);
  sol.vbar = std::move(corr.vbar);
  return sol;
}

/// u^i_t = θ_t x^i + κ_i(θ̄_t − θ_t)x̄ + L_t v^i_{t+1} + κ_i L̄_t v̄_{t+1}.
/// Uses only the agent's own state and the deep state. Returns 0 at t = T, the minimizer of
/// the last-step action cost since it affects no later state.
inline Vec optimal_action(std::size_t agent, const Vec & x, const Vec & xbar, const RiccatiSolution & sol, int t)
{
  const int T = static_cast<int>(sol.P.size());
  detail::check_index(t, T);
  if (agent >= sol.ratio.size()) { throw InputError("optimal_action: agent index out of range"); }
  if (t == T) { return Vec::Zero(sol.Lgain.empty() ? 0 : sol.Lgain.front().rows()); }
  const int k = t - 1;
  const double kappa = sol.ratio[agent];
  return sol.theta[k] * x + kappa * ((sol.thetabar[k] - sol.theta[k]) * xbar) + sol.Lgain[k] * sol.v[agent][k + 1]
       + kappa * (sol.Lbar[k] * sol.vbar[k + 1]);
}

/// Closed-loop simulation under the synthesized strategy, with optional additive noise.
inline TrajectoryLog rollout_lqr(const SystemModel & model, const CostWeights & w, const Population & pop,
                                 const RiccatiSolution & sol, const Disturbance & noise = {})
{
  const auto start = std::chrono::steady_clock::now();
  TrajectoryLog log = start_log(model, pop);
  const int T = model.horizon();
  const Vec zero_u = Vec::Zero(model.action_dim());
  for (int t = 1; t <= T; ++t) {
    const auto & xs = log.states[t - 1];
    const Vec xbar = deep_state(pop, xs);
    auto & us = log.actions[t - 1];
    us.reserve(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) {
      us.push_back(t < T ? optimal_action(i, xs[i], xbar, sol, t) : zero_u);
    }
    if (t < T) {
      auto & next = log.states[t];
      next.reserve(pop.size());
      for (std::size_t i = 0; i < pop.size(); ++i) {
        Vec x = model.step(t, xs[i], us[i]);
        if (noise) { x += noise(i, t); }
        next.push_back(std::move(x));
      }
    }
  }
  finalize_costs(log, w, pop);
  log.info.controller = "lqr";
  log.info.decomposition = to_string(sol.decomposition);
  log.info.noise = static_cast<bool>(noise);
  log.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

inline TrajectoryLog rollout_lqr(const SystemModel & model, const CostWeights & w, const Population & pop,
                                 Decomposition kind = Decomposition::Exact, const Disturbance & noise = {})
{
  return rollout_lqr(model, w, pop, synthesize_lqr(model, w, pop, kind), noise);
}

}  // namespace dstrack
