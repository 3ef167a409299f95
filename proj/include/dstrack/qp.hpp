#pragma once

/**
 * @file
 * @brief Dense convex QP  min ½zᵀHz + gᵀz  s.t.  lo ≤ Gz ≤ hi,  solved by operator
 * splitting (ADMM) with Ruiz equilibration and active-set polishing, plus the
 * condensing step that turns a box-constrained tracking window into such a QP.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace dstrack {

struct QpProblem
{
  Mat H;  ///< m×m, symmetric PSD
  Vec g;
  Mat G;  ///< k×m inequality rows
  Vec lo, hi;
  double constant = 0.0;  ///< added to the reported objective

  Eigen::Index variables() const { return H.rows(); }
  Eigen::Index constraints() const { return G.rows(); }

  double objective(const Vec & z) const { return 0.5 * z.dot(H * z) + g.dot(z) + constant; }

  void validate() const
  {
    const auto m = H.rows();
    if (H.cols() != m || g.size() != m) { throw InputError("QP: Hessian/gradient shape mismatch"); }
    if (G.cols() != m && G.rows() > 0) { throw InputError("QP: constraint matrix has wrong column count"); }
    if (lo.size() != G.rows() || hi.size() != G.rows()) { throw InputError("QP: bound length mismatch"); }
    if (!H.allFinite() || !g.allFinite() || !G.allFinite()) { throw InputError("QP: non-finite data"); }
    if (m > 0 && (H - H.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, H.cwiseAbs().maxCoeff())) {
      throw InputError("QP: Hessian not symmetric");
    }
    if (detail::min_eigenvalue(H) < -1e-9) { throw InputError("QP: Hessian not positive semi-definite"); }
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (std::isnan(lo[i]) || std::isnan(hi[i]) || lo[i] > hi[i]) {
        throw InputError("QP: bound row " + std::to_string(i) + " has lo > hi");
      }
    }
  }
};

enum class QpStatus { Solved, MaxIterations, Infeasible };

inline const char * to_string(QpStatus s)
{
  switch (s) {
    case QpStatus::Solved: return "solved";
    case QpStatus::MaxIterations: return "max_iterations";
    case QpStatus::Infeasible: return "infeasible";
  }
  return "?";
}

struct QpSolution
{
  Vec z;
  Vec y;  ///< constraint multipliers; y_i < 0 at an active lower bound, > 0 at an active upper bound
  double objective = 0.0;
  QpStatus status = QpStatus::MaxIterations;
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool polished = false;
};

struct QpSettings
{
  /// ADMM penalty
  double rho = 1.0;
  /// over-relaxation
  double relaxation = 1.6;
  /// proximal regularization of the primal step
  double sigma = 1e-6;
  /// absolute tolerance on both residuals (infinity norm, original units)
  double tolerance = 1e-8;
  int max_iterations = 20000;
  int scaling_passes = 3;
  /// residuals are checked every this many iterations
  int check_interval = 10;
  /// try active-set polishing once both residuals drop below this
  double polish_threshold = 1e-5;
  bool polish = true;
  /// consecutive iterations the infeasibility certificate must hold
  int infeasibility_window = 100;
  double infeasibility_tolerance = 1e-6;
};

/// Primal/dual starting point, e.g. the previous receding-horizon solution shifted by one stage.
struct QpWarmStart
{
  Vec z;
  Vec y;
};

namespace detail {

struct QpScaling
{
  Vec D;  ///< variable scaling, z = D ẑ
  Vec E;  ///< constraint scaling, ŵ = E w
  double c = 1.0;
};

inline double clamp_norm(double v) { return v < 1e-4 ? 1.0 : std::min(v, 1e4); }

/// Ruiz equilibration of [H Gᵀ; G 0] followed by cost scaling. Scales Hs, Gs, gs in place.
inline QpScaling equilibrate(Mat & Hs, Mat & Gs, Vec & gs, int passes)
{
  const auto m = Hs.rows();
  const auto k = Gs.rows();
  QpScaling s{Vec::Ones(m), Vec::Ones(k), 1.0};
  for (int p = 0; p < passes; ++p) {
    Vec delta(m), eps(k);
    for (Eigen::Index j = 0; j < m; ++j) {
      double nj = Hs.col(j).cwiseAbs().maxCoeff();
      if (k > 0) { nj = std::max(nj, Gs.col(j).cwiseAbs().maxCoeff()); }
      delta[j] = 1.0 / std::sqrt(clamp_norm(nj));
    }
    for (Eigen::Index i = 0; i < k; ++i) { eps[i] = 1.0 / std::sqrt(clamp_norm(Gs.row(i).cwiseAbs().maxCoeff())); }
    Hs = delta.asDiagonal() * Hs * delta.asDiagonal();
    Gs = eps.asDiagonal() * Gs * delta.asDiagonal();
    s.D = s.D.cwiseProduct(delta);
    s.E = s.E.cwiseProduct(eps);
  }
  gs = s.D.cwiseProduct(gs);
  double mean_col = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) { mean_col += Hs.col(j).cwiseAbs().maxCoeff(); }
  mean_col = m > 0 ? mean_col / static_cast<double>(m) : 0.0;
  const double gnorm = m > 0 ? gs.cwiseAbs().maxCoeff() : 0.0;
  s.c = 1.0 / clamp_norm(std::max(mean_col, gnorm));
  Hs *= s.c;
  gs *= s.c;
  return s;
}

inline double bound_violation(const QpProblem & p, const Vec & Gz)
{
  double v = 0.0;
  for (Eigen::Index i = 0; i < Gz.size(); ++i) { v = std::max({v, p.lo[i] - Gz[i], Gz[i] - p.hi[i]}); }
  return v;
}

inline double dual_residual(const QpProblem & p, const Vec & z, const Vec & y)
{
  Vec r = p.H * z + p.g;
  if (p.constraints() > 0) { r += p.G.transpose() * y; }
  return r.size() > 0 ? r.cwiseAbs().maxCoeff() : 0.0;
}

/// Largest multiplier with the wrong sign for its row (y>0 needs an upper bound, y<0 a lower bound).
inline double sign_violation(const QpProblem & p, const Vec & y, const Vec & Gz, double tol)
{
  double v = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0 && Gz[i] < p.hi[i] - tol) { v = std::max(v, y[i]); }
    if (y[i] < 0.0 && Gz[i] > p.lo[i] + tol) { v = std::max(v, -y[i]); }
  }
  return v;
}

enum class Active : signed char { None = 0, Lower = -1, Upper = 1 };

/// Solves the equality-constrained QP on the given active set. Returns false on inconsistency.
inline bool solve_active_set(const QpProblem & p, const std::vector<Active> & act, Vec & z, Vec & y)
{
  const auto m = p.variables();
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(act.size()); ++i) {
    if (act[i] != Active::None) { rows.push_back(i); }
  }
  const auto na = static_cast<Eigen::Index>(rows.size());
  Mat K = Mat::Zero(m + na, m + na);
  Vec rhs(m + na);
  K.topLeftCorner(m, m) = p.H;
  rhs.head(m) = -p.g;
  for (Eigen::Index r = 0; r < na; ++r) {
    const auto i = rows[r];
    K.block(m + r, 0, 1, m) = p.G.row(i);
    K.block(0, m + r, m, 1) = p.G.row(i).transpose();
    rhs[m + r] = act[i] == Active::Lower ? p.lo[i] : p.hi[i];
  }
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(K);
  Vec sol = cod.solve(rhs);
  // one step of iterative refinement
  sol += cod.solve(rhs - K * sol);
  if (!sol.allFinite() || (K * sol - rhs).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + rhs.cwiseAbs().maxCoeff())) {
    return false;
  }
  z = sol.head(m);
  y = Vec::Zero(p.constraints());
  for (Eigen::Index r = 0; r < na; ++r) { y[rows[r]] = sol[m + r]; }
  return true;
}

/// Active-set refinement seeded by an approximate primal-dual pair. On success z, y hold an
/// exact KKT point (up to rounding) satisfying the tolerance.
inline bool polish(const QpProblem & p, Vec & z, Vec & y, double tol)
{
  const auto k = p.constraints();
  const double ythr = 1e-9 * std::max(1.0, y.size() > 0 ? y.cwiseAbs().maxCoeff() : 0.0);
  std::vector<Active> act(k, Active::None);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (p.lo[i] == p.hi[i]) {
      act[i] = Active::Upper;
    } else if (y[i] < -ythr && std::isfinite(p.lo[i])) {
      act[i] = Active::Lower;
    } else if (y[i] > ythr && std::isfinite(p.hi[i])) {
      act[i] = Active::Upper;
    }
  }
  Vec zc, yc;
  for (int round = 0; round < 2 * static_cast<int>(k) + 2; ++round) {
    if (!solve_active_set(p, act, zc, yc)) { return false; }
    const Vec Gz = k > 0 ? Vec(p.G * zc) : Vec();
    bool changed = false;
    // drop the worst wrong-sign multiplier, else add the worst violated row
    double worst = 0.0;
    Eigen::Index worst_i = -1;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (p.lo[i] == p.hi[i]) { continue; }
      const double wrong = act[i] == Active::Lower ? yc[i] : act[i] == Active::Upper ? -yc[i] : 0.0;
      if (wrong > worst) {
        worst = wrong;
        worst_i = i;
      }
    }
    if (worst_i >= 0 && worst > 1e-12 * (1.0 + yc.cwiseAbs().maxCoeff())) {
      act[worst_i] = Active::None;
      changed = true;
    } else {
      double viol = 0.0;
      Eigen::Index vi = -1;
      Active side = Active::None;
      for (Eigen::Index i = 0; i < k; ++i) {
        if (act[i] != Active::None) { continue; }
        const double scale = 1e-12 * (1.0 + std::abs(Gz[i]));
        if (p.lo[i] - Gz[i] > std::max(viol, scale)) {
          viol = p.lo[i] - Gz[i];
          vi = i;
          side = Active::Lower;
        }
        if (Gz[i] - p.hi[i] > std::max(viol, scale)) {
          viol = Gz[i] - p.hi[i];
          vi = i;
          side = Active::Upper;
        }
      }
      if (vi >= 0) {
        act[vi] = side;
        changed = true;
      }
    }
    if (!changed) { break; }
  }
  const Vec Gz = k > 0 ? Vec(p.G * zc) : Vec();
  if (k > 0 && bound_violation(p, Gz) > tol) { return false; }
  if (dual_residual(p, zc, yc) > tol) { return false; }
  if (k > 0 && sign_violation(p, yc, Gz, tol) > tol) { return false; }
  z = zc;
  y = yc;
  return true;
}

inline void finish(const QpProblem & p, QpSolution & s)
{
  s.objective = p.objective(s.z);
  s.dual_residual = dual_residual(p, s.z, s.y);
  if (p.constraints() > 0) { s.primal_residual = std::max(s.primal_residual * 0.0, bound_violation(p, p.G * s.z)); }
  else { s.primal_residual = 0.0; }
}

}  // namespace detail

inline QpSolution solve(const QpProblem & p, const QpSettings & opt = {}, const QpWarmStart * warm = nullptr)
{
  p.validate();
  const auto m = p.variables();
  const auto k = p.constraints();
  QpSolution out;
  out.z = Vec::Zero(m);
  out.y = Vec::Zero(k);
  if (m == 0) {
    out.status = QpStatus::Solved;
    detail::finish(p, out);
    return out;
  }

  Mat Hs = p.H;
  Mat Gs = k > 0 ? p.G : Mat(0, m);
  Vec gs = p.g;
  const auto sc = detail::equilibrate(Hs, Gs, gs, opt.scaling_passes);
  const Vec ls = sc.E.cwiseProduct(p.lo);
  const Vec us = sc.E.cwiseProduct(p.hi);
  const double rho = opt.rho;
  const double a = opt.relaxation;

  Mat K = Hs + opt.sigma * Mat::Identity(m, m);
  if (k > 0) { K += rho * Gs.transpose() * Gs; }
  const Eigen::LLT<Mat> kkt(K);

  Vec x = Vec::Zero(m);
  Vec y = Vec::Zero(k);
  if (warm != nullptr && warm->z.size() == m) { x = warm->z.cwiseQuotient(sc.D); }
  if (warm != nullptr && warm->y.size() == k) { y = sc.c * warm->y.cwiseQuotient(sc.E); }
  Vec w = (Gs * x).cwiseMax(ls).cwiseMin(us);

  const auto unscaled = [&](QpSolution & s) {
    s.z = sc.D.cwiseProduct(x);
    s.y = sc.E.cwiseProduct(y) / sc.c;
  };

  int certificate_run = 0;
  bool converged = false;
  std::vector<signed char> last_polish_signature;
  int it = 0;
  for (it = 1; it <= opt.max_iterations; ++it) {
    Vec rhs = opt.sigma * x - gs;
    if (k > 0) { rhs += Gs.transpose() * (rho * w - y); }
    const Vec xt = kkt.solve(rhs);
    x = a * xt + (1.0 - a) * x;
    if (k > 0) {
      const Vec wr = a * (Gs * xt) + (1.0 - a) * w;
      const Vec wn = (wr + y / rho).cwiseMax(ls).cwiseMin(us);
      const Vec dy = rho * (wr - wn);
      y += dy;
      w = wn;

      // primal infeasibility certificate on the dual increment, original units
      const Vec dyo = sc.E.cwiseProduct(dy) / sc.c;
      const double dn = dyo.cwiseAbs().maxCoeff();
      bool cert = false;
      if (dn > 1e-12) {
        const double eps = opt.infeasibility_tolerance * dn;
        if ((p.G.transpose() * dyo).cwiseAbs().maxCoeff() <= eps) {
          double support = 0.0;
          bool finite = true;
          for (Eigen::Index i = 0; i < k && finite; ++i) {
            if (dyo[i] > 0.0) {
              finite = std::isfinite(p.hi[i]);
              support += p.hi[i] * dyo[i];
            } else if (dyo[i] < 0.0) {
              finite = std::isfinite(p.lo[i]);
              support += p.lo[i] * dyo[i];
            }
          }
          cert = finite && support < -eps;
        }
      }
      certificate_run = cert ? certificate_run + 1 : 0;
      if (certificate_run >= opt.infeasibility_window) {
        unscaled(out);
        out.status = QpStatus::Infeasible;
        out.iterations = it;
        detail::finish(p, out);
        return out;
      }
    }

    if (it % opt.check_interval != 0 && it != opt.max_iterations) { continue; }
    unscaled(out);
    const Vec wo = k > 0 ? Vec(w.cwiseQuotient(sc.E)) : Vec();
    const double prim = k > 0 ? (p.G * out.z - wo).cwiseAbs().maxCoeff() : 0.0;
    const double dual = detail::dual_residual(p, out.z, out.y);
    if (prim <= opt.tolerance && dual <= opt.tolerance) {
      converged = true;
      break;
    }
    if (opt.polish && prim <= opt.polish_threshold && dual <= opt.polish_threshold) {
      std::vector<signed char> sig(k);
      for (Eigen::Index i = 0; i < k; ++i) { sig[i] = out.y[i] > 0 ? 1 : out.y[i] < 0 ? -1 : 0; }
      if (sig != last_polish_signature) {
        last_polish_signature = sig;
        Vec z = out.z, yy = out.y;
        if (detail::polish(p, z, yy, opt.tolerance)) {
          out.z = z;
          out.y = yy;
          out.polished = true;
          out.status = QpStatus::Solved;
          out.iterations = it;
          detail::finish(p, out);
          return out;
        }
      }
    }
  }
  if (!converged) { it = std::min(it, opt.max_iterations); }
  unscaled(out);
  out.iterations = it;
  if (opt.polish) {
    Vec z = out.z, yy = out.y;
    if (detail::polish(p, z, yy, opt.tolerance)) {
      out.z = z;
      out.y = yy;
      out.polished = true;
      converged = true;
    }
  }
  out.status = converged ? QpStatus::Solved : QpStatus::MaxIterations;
  out.primal_residual = 0.0;
  detail::finish(p, out);
  if (!out.polished && k > 0) {
    const Vec wo = w.cwiseQuotient(sc.E);
    out.primal_residual = std::max(out.primal_residual, (p.G * out.z - wo).cwiseAbs().maxCoeff());
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// condensing

/// One stage of a tracking window: yᵀWy − 2lᵀy + c on the state, vᵀRv on the input.
struct StageCost
{
  Mat state_weight;
  Vec state_linear;
  double state_constant = 0.0;
  Mat input_weight;
};

/// ‖y − r‖_W + ‖v‖_R
inline StageCost tracking_stage(const Mat & W, const Vec & r, const Mat & R) { return {W, W * r, quad(r, W), R}; }

/// A condensed window over stages first..last (1-based). Decisions are the inputs at
/// first..last−1; the last-stage input is fixed at zero since it only adds its own cost.
struct CondensedWindow
{
  int first = 1;
  int last = 1;
  QpProblem qp;
  Mat prediction;      ///< stacked y_{first+1..last} = free_response + prediction · z
  Vec free_response;

  Vec predicted_states(const Vec & z) const { return free_response + prediction * z; }
};

inline CondensedWindow condense(const SystemModel & model, int first, int last, const Vec & y0,
                                std::span<const StageCost> stages, const Vec & state_lo, const Vec & state_hi,
                                const Vec & input_lo, const Vec & input_hi)
{
  const int dx = model.state_dim();
  const int du = model.action_dim();
  if (first < 1 || last > model.horizon() || last <= first) {
    throw InputError("condense: window must satisfy 1 <= first < last <= T");
  }
  const int N = last - first + 1;
  if (static_cast<int>(stages.size()) != N) { throw InputError("condense: one stage cost per window step required"); }
  if (y0.size() != dx || state_lo.size() != dx || state_hi.size() != dx || input_lo.size() != du
      || input_hi.size() != du) {
    throw InputError("condense: dimension mismatch");
  }
  for (int j = 0; j < du; ++j) {
    if (input_lo[j] > 0.0 || input_hi[j] < 0.0) { throw InputError("condense: input box must contain zero"); }
  }
  for (int j = 0; j < N; ++j) {
    const auto & st = stages[j];
    if (st.state_weight.rows() != dx || st.state_linear.size() != dx) { throw InputError("condense: stage cost shape"); }
    if (detail::min_eigenvalue(st.state_weight) < -1e-10) {
      throw InputError("condense: state weight not positive semi-definite at t=" + std::to_string(first + j));
    }
    if (j < N - 1 && (st.input_weight.rows() != du || detail::min_eigenvalue(st.input_weight) < 1e-10)) {
      throw InputError("condense: input weight not positive definite at t=" + std::to_string(first + j));
    }
  }
  for (int j = 0; j < dx; ++j) {
    if (y0[j] < state_lo[j] - 1e-9 || y0[j] > state_hi[j] + 1e-9) {
      throw RootInfeasibleError("window start state violates its box at t=" + std::to_string(first), first);
    }
  }

  const int m = (N - 1) * du;
  const int ns = (N - 1) * dx;
  CondensedWindow cw;
  cw.first = first;
  cw.last = last;
  cw.prediction = Mat::Zero(ns, m);
  cw.free_response = Vec::Zero(ns);

  QpProblem & qp = cw.qp;
  qp.H = Mat::Zero(m, m);
  qp.g = Vec::Zero(m);
  qp.constant = quad(y0, stages[0].state_weight) - 2.0 * stages[0].state_linear.dot(y0) + stages[0].state_constant;

  Vec f = y0;
  Mat Gamma = Mat::Zero(dx, m);
  for (int j = 0; j < N - 1; ++j) {
    const int t = first + j;
    qp.H.block(j * du, j * du, du, du) += 2.0 * stages[j].input_weight;
    f = model.A(t) * f;
    Gamma = model.A(t) * Gamma;
    Gamma.block(0, j * du, dx, du) += model.B(t);
    const auto & st = stages[j + 1];
    cw.free_response.segment(j * dx, dx) = f;
    cw.prediction.block(j * dx, 0, dx, m) = Gamma;
    const Mat WG = st.state_weight * Gamma;
    qp.H += 2.0 * Gamma.transpose() * WG;
    qp.g += 2.0 * Gamma.transpose() * (st.state_weight * f - st.state_linear);
    qp.constant += quad(f, st.state_weight) - 2.0 * st.state_linear.dot(f) + st.state_constant;
  }
  qp.H = 0.5 * (qp.H + qp.H.transpose());

  qp.G = Mat::Zero(m + ns, m);
  qp.G.topRows(m).setIdentity();
  qp.G.bottomRows(ns) = cw.prediction;
  qp.lo.resize(m + ns);
  qp.hi.resize(m + ns);
  for (int j = 0; j < N - 1; ++j) {
    qp.lo.segment(j * du, du) = input_lo;
    qp.hi.segment(j * du, du) = input_hi;
    qp.lo.segment(m + j * dx, dx) = state_lo - cw.free_response.segment(j * dx, dx);
    qp.hi.segment(m + j * dx, dx) = state_hi - cw.free_response.segment(j * dx, dx);
  }
  return cw;
}

}  // namespace dstrack
