#pragma once

/**
 * @file
 * @brief Swarm data model: dynamics, agents, team cost weights, box bounds and
 * the aggregate (deep state / deep action) primitives.
 *
 * Time indices in the public API are 1-based (t = 1..T).
 */

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace dstrack {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Quadratic form vᵀMv (no square root).
inline double quad(const Vec & v, const Mat & M) { return v.dot(M * v); }

namespace detail {

inline std::string dims(const Mat & M)
{
  std::ostringstream os;
  os << M.rows() << "x" << M.cols();
  return os.str();
}

inline double min_eigenvalue(const Mat & M)
{
  if (M.size() == 0) { return 0.0; }
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool all_finite(const Mat & M) { return M.allFinite(); }

/// Shape-aware equality (Eigen's operator== requires equal shapes).
template<typename A, typename B>
bool same(const A & x, const B & y)
{
  return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
}

/// Symmetrize M when its asymmetry is within 1e-12 of its Frobenius norm, throw otherwise.
inline Mat symmetrized(const Mat & M, const std::string & name)
{
  if (M.rows() != M.cols()) { throw InputError(name + " must be square, got " + dims(M)); }
  if (!all_finite(M)) { throw InputError(name + " has non-finite entries"); }
  const double asym = (M - M.transpose()).cwiseAbs().maxCoeff();
  if (M.size() > 0 && asym > 1e-12 * std::max(M.norm(), 1e-300)) {
    throw InputError(name + " is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }
  return 0.5 * (M + M.transpose());
}

inline void check_index(int t, int horizon)
{
  if (t < 1 || t > horizon) {
    throw InputError("time index " + std::to_string(t) + " outside 1.." + std::to_string(horizon));
  }
}

}  // namespace detail

/// Time-varying linear dynamics x_{t+1} = A_t x_t + B_t u_t shared by every agent.
class SystemModel
{
public:
  SystemModel() = default;

  SystemModel(std::vector<Mat> A, std::vector<Mat> B) : A_(std::move(A)), B_(std::move(B))
  {
    if (A_.empty()) { throw InputError("horizon must be positive"); }
    if (A_.size() != B_.size()) {
      throw InputError("A and B sequences differ in length (" + std::to_string(A_.size()) + " vs "
                       + std::to_string(B_.size()) + ")");
    }
    const auto dx = A_.front().rows();
    const auto du = B_.front().cols();
    if (dx == 0 || du == 0) { throw InputError("state and action dimensions must be positive"); }
    for (std::size_t k = 0; k < A_.size(); ++k) {
      const std::string t = std::to_string(k + 1);
      if (A_[k].rows() != dx || A_[k].cols() != dx) {
        throw InputError("A_" + t + " has shape " + detail::dims(A_[k]) + ", expected square of size "
                         + std::to_string(dx));
      }
      if (B_[k].rows() != dx || B_[k].cols() != du) {
        throw InputError("B_" + t + " has shape " + detail::dims(B_[k]));
      }
      if (!A_[k].allFinite() || !B_[k].allFinite()) { throw InputError("dynamics at t=" + t + " not finite"); }
    }
  }

  static SystemModel time_invariant(int horizon, const Mat & A, const Mat & B)
  {
    if (horizon < 1) { throw InputError("horizon must be positive"); }
    return SystemModel(std::vector<Mat>(horizon, A), std::vector<Mat>(horizon, B));
  }

  int horizon() const noexcept { return static_cast<int>(A_.size()); }
  int state_dim() const noexcept { return A_.empty() ? 0 : static_cast<int>(A_.front().rows()); }
  int action_dim() const noexcept { return B_.empty() ? 0 : static_cast<int>(B_.front().cols()); }

  const Mat & A(int t) const
  {
    detail::check_index(t, horizon());
    return A_[t - 1];
  }
  const Mat & B(int t) const
  {
    detail::check_index(t, horizon());
    return B_[t - 1];
  }

  Vec step(int t, const Vec & x, const Vec & u) const { return A(t) * x + B(t) * u; }

  const std::vector<Mat> & A_sequence() const noexcept { return A_; }
  const std::vector<Mat> & B_sequence() const noexcept { return B_; }

  bool operator==(const SystemModel & o) const
  {
    if (A_.size() != o.A_.size()) { return false; }
    for (std::size_t k = 0; k < A_.size(); ++k) {
      if (!detail::same(A_[k], o.A_[k]) || !detail::same(B_[k], o.B_[k])) { return false; }
    }
    return true;
  }

private:
  std::vector<Mat> A_;
  std::vector<Mat> B_;
};

/// One agent: influence factor, local-cost weight, local reference trajectory, initial state.
struct AgentProfile
{
  double alpha = 1.0;
  double gamma = 1.0;
  std::vector<Vec> reference;  ///< r_1..r_T
  Vec initial_state;

  bool operator==(const AgentProfile & o) const
  {
    if (alpha != o.alpha || gamma != o.gamma || !detail::same(initial_state, o.initial_state)
        || reference.size() != o.reference.size()) {
      return false;
    }
    for (std::size_t k = 0; k < reference.size(); ++k) {
      if (!detail::same(reference[k], o.reference[k])) { return false; }
    }
    return true;
  }
};

enum class TrackingKind { Strong, Weak };

/// Ordered set of agents. Agent order is the summation order of every aggregate.
class Population
{
public:
  Population() = default;

  explicit Population(std::vector<AgentProfile> agents) : agents_(std::move(agents))
  {
    if (agents_.empty()) { throw InputError("population must contain at least one agent"); }
    const auto dx = agents_.front().initial_state.size();
    const auto T = agents_.front().reference.size();
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const auto & a = agents_[i];
      const std::string id = "agent " + std::to_string(i + 1);
      if (!std::isfinite(a.alpha)) { throw InputError(id + ": alpha not finite"); }
      if (!(a.gamma > 0.0) || !std::isfinite(a.gamma)) {
        throw InputError(id + ": gamma must be positive and finite");
      }
      if (a.initial_state.size() != dx) { throw InputError(id + ": initial state dimension mismatch"); }
      if (a.reference.size() != T) { throw InputError(id + ": reference length mismatch"); }
      for (const auto & r : a.reference) {
        if (r.size() != dx) { throw InputError(id + ": reference dimension mismatch"); }
      }
    }
  }

  std::size_t size() const noexcept { return agents_.size(); }
  const AgentProfile & operator[](std::size_t i) const { return agents_[i]; }
  const std::vector<AgentProfile> & agents() const noexcept { return agents_; }

  std::vector<double> alphas() const
  {
    std::vector<double> out;
    out.reserve(agents_.size());
    for (const auto & a : agents_) { out.push_back(a.alpha); }
    return out;
  }

  double mean_alpha() const
  {
    double s = 0.0;
    for (const auto & a : agents_) { s += a.alpha; }
    return s / static_cast<double>(agents_.size());
  }

  /// Checks horizon and state dimension against the dynamics.
  void check_compatible(const SystemModel & model) const
  {
    const auto & a = agents_.front();
    if (static_cast<int>(a.initial_state.size()) != model.state_dim()) {
      throw InputError("agent state dimension " + std::to_string(a.initial_state.size())
                       + " differs from model state dimension " + std::to_string(model.state_dim()));
    }
    if (static_cast<int>(a.reference.size()) != model.horizon()) {
      throw InputError("agent references cover " + std::to_string(a.reference.size()) + " steps, horizon is "
                       + std::to_string(model.horizon()));
    }
  }

  /// Copy with the influence factors replaced.
  Population with_alphas(std::span<const double> alphas) const
  {
    if (alphas.size() != agents_.size()) { throw InputError("factor vector length mismatch"); }
    auto copy = agents_;
    for (std::size_t i = 0; i < copy.size(); ++i) { copy[i].alpha = alphas[i]; }
    return Population(std::move(copy));
  }

  bool operator==(const Population & o) const { return agents_ == o.agents_; }

private:
  std::vector<AgentProfile> agents_;
};

/// Per-step quadratic weights of the team cost, plus the global reference.
///
/// The per-step cost for the whole team is
/// (1/n)Σ γ_i(‖x^i−r^i‖_Q + ‖u^i‖_R) + ‖x̄−s‖_Q̄ + ‖ū‖_R̄ + offset.
/// `offset` is a constant that lets equivalent cost forms agree exactly; it is zero by default.
class CostWeights
{
public:
  CostWeights() = default;

  CostWeights(std::vector<Mat> Q, std::vector<Mat> R, std::vector<Mat> Qbar, std::vector<Mat> Rbar,
              std::vector<Vec> s, std::vector<double> offset = {})
      : offset_(std::move(offset))
  {
    const std::size_t T = Q.size();
    if (T == 0) { throw InputError("cost weights need at least one step"); }
    if (R.size() != T || Qbar.size() != T || Rbar.size() != T || s.size() != T) {
      throw InputError("cost weight sequences must all have " + std::to_string(T) + " entries");
    }
    if (offset_.empty()) { offset_.assign(T, 0.0); }
    if (offset_.size() != T) { throw InputError("offset sequence length mismatch"); }
    const auto dx = Q.front().rows();
    const auto du = R.front().rows();
    for (std::size_t k = 0; k < T; ++k) {
      const std::string t = "_" + std::to_string(k + 1);
      Q_.push_back(detail::symmetrized(Q[k], "Q" + t));
      R_.push_back(detail::symmetrized(R[k], "R" + t));
      Qbar_.push_back(detail::symmetrized(Qbar[k], "Qbar" + t));
      Rbar_.push_back(detail::symmetrized(Rbar[k], "Rbar" + t));
      if (Q_.back().rows() != dx || Qbar_.back().rows() != dx || s[k].size() != dx) {
        throw InputError("state weight dimension mismatch at t=" + std::to_string(k + 1));
      }
      if (R_.back().rows() != du || Rbar_.back().rows() != du) {
        throw InputError("action weight dimension mismatch at t=" + std::to_string(k + 1));
      }
      if (!s[k].allFinite() || !std::isfinite(offset_[k])) {
        throw InputError("global reference not finite at t=" + std::to_string(k + 1));
      }
    }
    s_ = std::move(s);
  }

  static CostWeights time_invariant(int horizon, const Mat & Q, const Mat & R, const Mat & Qbar,
                                    const Mat & Rbar, const Vec & s)
  {
    const auto T = static_cast<std::size_t>(horizon);
    return CostWeights(std::vector<Mat>(T, Q), std::vector<Mat>(T, R), std::vector<Mat>(T, Qbar),
                       std::vector<Mat>(T, Rbar), std::vector<Vec>(T, s));
  }

  int horizon() const noexcept { return static_cast<int>(Q_.size()); }
  int state_dim() const noexcept { return Q_.empty() ? 0 : static_cast<int>(Q_.front().rows()); }
  int action_dim() const noexcept { return R_.empty() ? 0 : static_cast<int>(R_.front().rows()); }

  const Mat & Q(int t) const { return at(Q_, t); }
  const Mat & R(int t) const { return at(R_, t); }
  const Mat & Qbar(int t) const { return at(Qbar_, t); }
  const Mat & Rbar(int t) const { return at(Rbar_, t); }
  const Vec & s(int t) const { return at(s_, t); }
  double offset(int t) const { return at(offset_, t); }

  /// (2−μ)Q_t + Q̄_t
  Mat Qbold(int t, double mu) const { return (2.0 - mu) * Q(t) + Qbar(t); }
  /// (2−μ)R_t + R̄_t
  Mat Rbold(int t, double mu) const { return (2.0 - mu) * R(t) + Rbar(t); }

  /// Convexity condition: Q_t, 𝐐_t PSD and R_t, 𝐑_t PD for every t. Throws AssumptionError.
  void validate(double mu) const
  {
    for (int t = 1; t <= horizon(); ++t) {
      const auto fail = [t](const std::string & what) {
        throw AssumptionError("convexity condition violated: " + what + " at t=" + std::to_string(t));
      };
      if (detail::min_eigenvalue(Q(t)) < -1e-10) { fail("Q_t not positive semi-definite"); }
      if (detail::min_eigenvalue(R(t)) < 1e-10) { fail("R_t not positive definite"); }
      if (detail::min_eigenvalue(Qbold(t, mu)) < -1e-10) { fail("(2-mu)Q_t + Qbar_t not positive semi-definite"); }
      if (detail::min_eigenvalue(Rbold(t, mu)) < 1e-10) { fail("(2-mu)R_t + Rbar_t not positive definite"); }
    }
  }

  void check_compatible(const SystemModel & model) const
  {
    if (horizon() != model.horizon()) {
      throw InputError("cost weights cover " + std::to_string(horizon()) + " steps, horizon is "
                       + std::to_string(model.horizon()));
    }
    if (state_dim() != model.state_dim() || action_dim() != model.action_dim()) {
      throw InputError("cost weight dimensions do not match the dynamics");
    }
  }

  bool operator==(const CostWeights & o) const
  {
    return eq(Q_, o.Q_) && eq(R_, o.R_) && eq(Qbar_, o.Qbar_) && eq(Rbar_, o.Rbar_) && eqv(s_, o.s_)
        && offset_ == o.offset_;
  }

private:
  template<typename T>
  static const T & at(const std::vector<T> & seq, int t)
  {
    detail::check_index(t, static_cast<int>(seq.size()));
    return seq[t - 1];
  }
  static bool eq(const std::vector<Mat> & a, const std::vector<Mat> & b)
  {
    if (a.size() != b.size()) { return false; }
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (!detail::same(a[k], b[k])) { return false; }
    }
    return true;
  }
  static bool eqv(const std::vector<Vec> & a, const std::vector<Vec> & b)
  {
    if (a.size() != b.size()) { return false; }
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (!detail::same(a[k], b[k])) { return false; }
    }
    return true;
  }

  std::vector<Mat> Q_, R_, Qbar_, Rbar_;
  std::vector<Vec> s_;
  std::vector<double> offset_;
};

/// Box constraints on local states/actions and on the deep state/action.
struct BoxBounds
{
  Vec a, b;        ///< local state lower/upper
  Vec c, d;        ///< local action lower/upper
  Vec abar, bbar;  ///< deep-state lower/upper
  Vec cbar, dbar;  ///< deep-action lower/upper

  /// Dimensions plus strict signs a < 0 < b, c < 0 < d (and barred versions).
  void validate(int state_dim, int action_dim) const
  {
    const auto check = [](const Vec & lo, const Vec & hi, int dim, const char * lo_name, const char * hi_name) {
      if (lo.size() != dim || hi.size() != dim) {
        throw InputError(std::string("bounds ") + lo_name + "/" + hi_name + " must have dimension "
                         + std::to_string(dim));
      }
      for (int k = 0; k < dim; ++k) {
        if (!(lo[k] < 0.0)) {
          throw AssumptionError(std::string("bound ") + lo_name + "[" + std::to_string(k + 1) + "] must be negative");
        }
        if (!(hi[k] > 0.0)) {
          throw AssumptionError(std::string("bound ") + hi_name + "[" + std::to_string(k + 1) + "] must be positive");
        }
      }
    };
    check(a, b, state_dim, "a", "b");
    check(c, d, action_dim, "c", "d");
    check(abar, bbar, state_dim, "abar", "bbar");
    check(cbar, dbar, action_dim, "cbar", "dbar");
  }

  bool operator==(const BoxBounds & o) const
  {
    using detail::same;
    return same(a, o.a) && same(b, o.b) && same(c, o.c) && same(d, o.d) && same(abar, o.abar)
        && same(bbar, o.bbar) && same(cbar, o.cbar) && same(dbar, o.dbar);
  }
};

namespace detail {

inline Vec weighted_mean(std::span<const double> alphas, std::span<const Vec> vectors)
{
  if (vectors.size() != alphas.size()) {
    throw InputError("expected " + std::to_string(alphas.size()) + " vectors, got " + std::to_string(vectors.size()));
  }
  const auto dim = vectors.front().size();
  Vec out = Vec::Zero(dim);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != dim) { throw InputError("vector dimension mismatch at agent " + std::to_string(i + 1)); }
    out += alphas[i] * vectors[i];
  }
  return out / static_cast<double>(vectors.size());
}

}  // namespace detail

/// (1/n) Σ α_i x^i, summed in agent order.
inline Vec deep_state(const Population & pop, std::span<const Vec> states)
{
  const auto alphas = pop.alphas();
  return detail::weighted_mean(alphas, states);
}

/// (1/n) Σ α_i u^i, summed in agent order.
inline Vec deep_action(const Population & pop, std::span<const Vec> actions)
{
  const auto alphas = pop.alphas();
  return detail::weighted_mean(alphas, actions);
}

/// Strong when the factors average to one (center of swarm is a center of mass).
inline TrackingKind classify_tracking(const Population & pop)
{
  return std::abs(pop.mean_alpha() - 1.0) <= 1e-10 ? TrackingKind::Strong : TrackingKind::Weak;
}

/// μ = (1/n) Σ α_i² / γ_i
inline double mu(const Population & pop)
{
  double s = 0.0;
  for (const auto & a : pop.agents()) {
    if (!(a.gamma > 0.0)) { throw InputError("gamma must be positive"); }
    s += a.alpha * a.alpha / a.gamma;
  }
  return s / static_cast<double>(pop.size());
}

/// All agents' references at time t.
inline std::vector<Vec> references_at(const Population & pop, int t)
{
  std::vector<Vec> out;
  out.reserve(pop.size());
  for (const auto & a : pop.agents()) {
    detail::check_index(t, static_cast<int>(a.reference.size()));
    out.push_back(a.reference[t - 1]);
  }
  return out;
}

/// Team cost at step t, averaged over agents.
inline double per_step_cost(const CostWeights & w, const Population & pop, std::span<const Vec> states,
                            std::span<const Vec> actions, int t)
{
  if (states.size() != pop.size() || actions.size() != pop.size()) {
    throw InputError("per-step cost needs one state and one action per agent");
  }
  const Mat & Q = w.Q(t);
  const Mat & R = w.R(t);
  double local = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const auto & ag = pop[i];
    if (states[i].size() != Q.rows() || actions[i].size() != R.rows()) {
      throw InputError("state/action dimension mismatch at agent " + std::to_string(i + 1));
    }
    local += ag.gamma * (quad(states[i] - ag.reference[t - 1], Q) + quad(actions[i], R));
  }
  local /= static_cast<double>(pop.size());
  const Vec xbar = deep_state(pop, states);
  const Vec ubar = deep_action(pop, actions);
  return local + quad(xbar - w.s(t), w.Qbar(t)) + quad(ubar, w.Rbar(t)) + w.offset(t);
}

/// Global weight equivalent to the weighted tracking term (1/n)Σ α_i‖x^i − F x̄‖_Q once the
/// local part (1/n)Σ α_i‖x^i‖_Q is split off: (I−F)ᵀQ(I−F) − Q. Exact when the factors average to one.
inline Mat reformulate_weighted_tracking(const Mat & Q, const Mat & F)
{
  if (Q.rows() != Q.cols() || F.rows() != F.cols() || Q.rows() != F.rows()) {
    throw InputError("reformulate_weighted_tracking: Q and F must be square of equal size");
  }
  const Mat IF = Mat::Identity(F.rows(), F.cols()) - F;
  const Mat out = IF.transpose() * Q * IF - Q;
  return 0.5 * (out + out.transpose());
}

/// Single tracking term ‖x − target‖_weight + offset.
struct TrackingTerm
{
  Mat weight;
  Vec target;
  double offset = 0.0;
};

/// Merges ‖x−s_a‖_{W_a} + ‖x−s_b‖_{W_b} into ‖x−s‖_{W_a+W_b} + offset. The summed weight must be
/// invertible on the span of W_a s_a + W_b s_b.
inline TrackingTerm combine_tracking_terms(const Mat & Wa, const Vec & sa, const Mat & Wb, const Vec & sb)
{
  TrackingTerm out;
  out.weight = Wa + Wb;
  const Vec lin = Wa * sa + Wb * sb;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(out.weight);
  out.target = cod.solve(lin);
  if ((out.weight * out.target - lin).norm() > 1e-9 * (1.0 + lin.norm())) {
    throw InputError("combined tracking weight is singular on the target direction");
  }
  out.offset = quad(sa, Wa) + quad(sb, Wb) - quad(out.target, out.weight);
  return out;
}

}  // namespace dstrack
