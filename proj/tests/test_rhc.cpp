#include <gtest/gtest.h>

#include <random>

#include "dstrack/lqr.hpp"
#include "dstrack/rhc.hpp"
#include "instances.hpp"

using namespace dstrack;

namespace {

Mat s1(double v) { return Mat::Constant(1, 1, v); }
Vec v1(double v) { return Vec::Constant(1, v); }

Population scalar_pop(const std::vector<double> & alpha, const std::vector<double> & gamma, int T,
                      const std::vector<double> & x0 = {}, const std::vector<double> & r = {})
{
  std::vector<AgentProfile> agents;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    AgentProfile a;
    a.alpha = alpha[i];
    a.gamma = gamma[i];
    a.initial_state = v1(x0.empty() ? 0.0 : x0[i]);
    a.reference.assign(T, v1(r.empty() ? 0.0 : r[i]));
    agents.push_back(a);
  }
  return Population(agents);
}

BoxBounds scalar_box(double a, double b, double c, double d, double abar, double bbar, double cbar, double dbar)
{
  return {v1(a), v1(b), v1(c), v1(d), v1(abar), v1(bbar), v1(cbar), v1(dbar)};
}

BoxBounds wide_box(int dx, int du, double size = 1e6)
{
  const Vec x = Vec::Constant(dx, size), u = Vec::Constant(du, size);
  return {-x, x, -u, u, -x, x, -u, u};
}

double max_abs(const Vec & v) { return v.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Bounds, PositiveSymmetricHalf)
{
  const auto pop = scalar_pop({1, 1}, {1, 1}, 1);
  const auto set = build_bounds_positive(scalar_box(-2, 2, -3, 3, -2, 2, -3, 3), pop, 0.5);
  EXPECT_DOUBLE_EQ(set.global.state_lo[0], -1.0);
  EXPECT_DOUBLE_EQ(set.global.state_hi[0], 1.0);
  EXPECT_DOUBLE_EQ(set.global.input_lo[0], -1.5);
  EXPECT_DOUBLE_EQ(set.global.input_hi[0], 1.5);
  for (const auto & box : set.local) {
    EXPECT_DOUBLE_EQ(box.state_lo[0], -1.0);
    EXPECT_DOUBLE_EQ(box.input_hi[0], 1.5);
  }
}

TEST(Bounds, PositiveElementWise)
{
  const auto pop = scalar_pop({1}, {1}, 1);
  const auto set = build_bounds_positive(scalar_box(-1, 1, -1, 1, -2, 2, -1, 1), pop, 0.5);
  EXPECT_DOUBLE_EQ(set.global.state_lo[0], -0.5);
  EXPECT_DOUBLE_EQ(set.local[0].state_lo[0], -0.5);
}

TEST(Bounds, PositiveUsesMeanAlpha)
{
  const auto pop = scalar_pop({0.2, 0.6}, {1, 1}, 1);
  const auto set = build_bounds_positive(scalar_box(-1, 1, -1, 1, -1, 0.1, -1, 1), pop, 0.25);
  // ᾱ = 0.4: max(−0.4, −1) = −0.4, min(0.4, 0.1) = 0.1
  EXPECT_DOUBLE_EQ(set.global.state_lo[0], -0.75 * 0.4);
  EXPECT_DOUBLE_EQ(set.global.state_hi[0], 0.75 * 0.1);
  EXPECT_NEAR(set.local[1].state_hi[0], 0.25 * 0.1, 1e-16);
}

TEST(Bounds, SignedCaseOne)
{
  const auto pop = scalar_pop({0.5}, {1}, 1);
  const auto set = build_bounds_signed(scalar_box(-2, 1, -2, 1, -2, 1, -2, 1), pop, 0.5);
  EXPECT_DOUBLE_EQ(set.local[0].state_hi[0], 0.5);
  EXPECT_DOUBLE_EQ(set.local[0].state_lo[0], -0.5);
  EXPECT_DOUBLE_EQ(set.global.state_hi[0], 0.5);
}

TEST(Bounds, SignedCaseTwo)
{
  EXPECT_DOUBLE_EQ(symmetric_margin(v1(-1), v1(3), v1(-1), v1(3))[0], 1.0);
  EXPECT_DOUBLE_EQ(symmetric_margin(v1(-2), v1(1), v1(-2), v1(1))[0], 1.0);
  EXPECT_DOUBLE_EQ(symmetric_margin(v1(-1), v1(1), v1(-1), v1(1))[0], 1.0);
}

TEST(Bounds, SignedSymmetricMatchesPositiveWhenMeanAlphaIsOne)
{
  const auto pop = scalar_pop({1, 1, 1}, {1, 2, 1}, 1);
  const auto box = scalar_box(-2, 2, -1, 1, -3, 3, -0.5, 0.5);
  const auto pos = build_bounds_positive(box, pop, 0.3);
  const auto sig = build_bounds_signed(box, pop, 0.3);
  EXPECT_NEAR(max_abs(pos.global.state_lo - sig.global.state_lo), 0.0, 1e-15);
  EXPECT_NEAR(max_abs(pos.global.input_hi - sig.global.input_hi), 0.0, 1e-15);
  EXPECT_NEAR(max_abs(pos.local[1].state_hi - sig.local[1].state_hi), 0.0, 1e-15);
}

TEST(Bounds, AssumptionViolations)
{
  const auto box = scalar_box(-1, 1, -1, 1, -1, 1, -1, 1);
  EXPECT_THROW(build_bounds_positive(box, scalar_pop({-0.5}, {1}, 1), 0.5), AssumptionError);
  EXPECT_THROW(build_bounds_positive(box, scalar_pop({0.8}, {0.5}, 1), 0.5), AssumptionError);
  EXPECT_THROW(build_bounds_positive(box, scalar_pop({1.5}, {2}, 1), 0.5), AssumptionError);
  EXPECT_THROW(build_bounds_signed(box, scalar_pop({-0.8}, {0.5}, 1), 0.5), AssumptionError);
  EXPECT_THROW(build_bounds_signed(box, scalar_pop({-1.2}, {2}, 1), 0.5), AssumptionError);
  EXPECT_NO_THROW(build_bounds_signed(box, scalar_pop({-0.5}, {1}, 1), 0.5));
  EXPECT_THROW(build_bounds_positive(box, scalar_pop({0.5}, {1}, 1), 1.0), AssumptionError);
  EXPECT_THROW(build_bounds_positive(box, scalar_pop({0.5}, {1}, 1), 0.0), AssumptionError);
  EXPECT_THROW(build_bounds_positive(scalar_box(0, 1, -1, 1, -1, 1, -1, 1), scalar_pop({0.5}, {1}, 1), 0.5),
               AssumptionError);
}

TEST(Bounds, ContainmentAlgebra)
{
  std::mt19937_64 gen(31);
  for (int rep = 0; rep < 100; ++rep) {
    for (auto regime : {BoundRegime::PositiveFactors, BoundRegime::SignedFactors}) {
      const auto inst = instances::random_rhc(gen, regime);
      const auto set = build_bounds(inst.bounds, inst.population, inst.settings.lambda, regime);
      const auto & b = set.originals;
      const double abar = inst.population.mean_alpha();
      const Vec eff_lo = (abar * b.a).cwiseMax(b.abar);
      const Vec eff_hi = (abar * b.b).cwiseMin(b.bbar);
      for (std::size_t i = 0; i < inst.population.size(); ++i) {
        const double k = inst.population[i].alpha / inst.population[i].gamma;
        const auto & loc = set.local[i];
        // extreme recombined values Δ + k·global stay inside the original local boxes
        const auto & g = set.global;
        const Vec lo = loc.state_lo + (k > 0 ? Vec(k * g.state_lo) : Vec(k * g.state_hi));
        const Vec hi = loc.state_hi + (k > 0 ? Vec(k * g.state_hi) : Vec(k * g.state_lo));
        const Vec ulo = loc.input_lo + (k > 0 ? Vec(k * g.input_lo) : Vec(k * g.input_hi));
        const Vec uhi = loc.input_hi + (k > 0 ? Vec(k * g.input_hi) : Vec(k * g.input_lo));
        EXPECT_GE((lo - b.a).minCoeff(), -1e-12);
        EXPECT_LE((hi - b.b).maxCoeff(), 1e-12);
        EXPECT_GE((ulo - b.c).minCoeff(), -1e-12);
        EXPECT_LE((uhi - b.d).maxCoeff(), 1e-12);
        EXPECT_TRUE((loc.state_lo.array() < 0).all() && (loc.state_hi.array() > 0).all());
        EXPECT_TRUE((loc.input_lo.array() < 0).all() && (loc.input_hi.array() > 0).all());
      }
      if (regime == BoundRegime::PositiveFactors) {
        const double k = set.lambda / (1.0 - set.lambda);
        EXPECT_GE((k * set.global.state_lo + set.global.state_lo - eff_lo).minCoeff(), -1e-12);
        EXPECT_GE((eff_lo - b.a).minCoeff(), -1e-12);
        EXPECT_LE((set.global.state_hi - eff_hi).maxCoeff(), 1e-12);
      }
    }
  }
}

TEST(DistributedRhc, RejectsNonConvexGlobalProblem)
{
  const auto pop = scalar_pop({3}, {1}, 4);
  const auto model = SystemModel::time_invariant(4, s1(1), s1(1));
  const auto w = CostWeights::time_invariant(4, s1(1), s1(1), s1(10), s1(10), v1(0));
  ASSERT_GT(mu(pop), 2.0);
  try {
    DistributedRhc rhc(model, w, pop, scalar_box(-1, 1, -1, 1, -1, 1, -1, 1), RhcSettings{});
    FAIL() << "expected AssumptionError";
  } catch (const AssumptionError & e) {
    EXPECT_NE(std::string(e.what()).find("(2-mu)Q"), std::string::npos);
  }
}

TEST(DistributedRhc, RejectsBadHorizon)
{
  const auto pop = scalar_pop({1}, {1}, 4);
  const auto model = SystemModel::time_invariant(4, s1(1), s1(1));
  const auto w = CostWeights::time_invariant(4, s1(1), s1(1), s1(0), s1(0), v1(0));
  RhcSettings st;
  st.horizon = 0;
  EXPECT_THROW(DistributedRhc(model, w, pop, wide_box(1, 1), st), InputError);
}

TEST(DistributedRhc, ZeroDataGivesZeroInputs)
{
  const auto pop = scalar_pop({0.5, 1}, {1, 1}, 5);
  const auto model = SystemModel::time_invariant(5, s1(1), s1(1));
  const auto w = CostWeights::time_invariant(5, s1(1), s1(1), s1(1), s1(0), v1(0));
  DistributedRhc rhc(model, w, pop, scalar_box(-1, 1, -1, 1, -1, 1, -1, 1), RhcSettings{});
  EXPECT_NEAR(rhc.local_step(0, v1(0), 1)[0], 0.0, 1e-12);
  EXPECT_NEAR(rhc.global_step(v1(0), 2)[0], 0.0, 1e-12);
  EXPECT_THROW(rhc.local_step(0, v1(0), 5), InputError);
  EXPECT_THROW(rhc.local_step(2, v1(0), 1), InputError);
}

TEST(DistributedRhc, LocalStepSaturates)
{
  const auto pop = scalar_pop({1, 1}, {1, 1}, 6, {0, 0}, {10, -10});
  const auto model = SystemModel::time_invariant(6, s1(1), s1(1));
  const auto w = CostWeights::time_invariant(6, s1(1), s1(1), s1(0), s1(0), v1(0));
  DistributedRhc rhc(model, w, pop, scalar_box(-100, 100, -0.2, 0.2, -100, 100, -0.2, 0.2), RhcSettings{3, 0.5});
  ASSERT_NEAR(rhc.bounds().local[0].input_hi[0], 0.1, 1e-15);
  EXPECT_NEAR(rhc.delta_reference(0)[0][0], 10.0, 1e-15);
  EXPECT_NEAR(rhc.local_step(0, v1(0), 1)[0], 0.1, 1e-8);
  EXPECT_NEAR(rhc.local_step(1, v1(0), 1)[0], -0.1, 1e-8);
}

TEST(DistributedRhc, WideLocalStepIsLqFirstInput)
{
  std::mt19937_64 gen(32);
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = instances::random_rhc(gen, BoundRegime::PositiveFactors, 12, 6);
    inst.bounds = wide_box(inst.model.state_dim(), inst.model.action_dim());
    const int T = inst.model.horizon();
    DistributedRhc rhc(inst.model, inst.weights, inst.population, inst.bounds, inst.settings);
    const int t = oracle::uniform_int(gen, 1, T - 1);
    const int last = std::min(T, t + inst.settings.horizon);
    const Vec dy = oracle::random_vector(gen, inst.model.state_dim());
    std::vector<Mat> W, R;
    std::vector<Vec> l;
    for (int tau = t; tau <= last; ++tau) {
      W.push_back(inst.weights.Q(tau));
      R.push_back(inst.weights.R(tau));
      l.push_back(inst.weights.Q(tau) * rhc.delta_reference(0)[tau - 1]);
    }
    const auto gains = solve_riccati(inst.model, t, W, R);
    const auto q = solve_affine(inst.model, gains, l);
    const Vec expect = gains.theta[0] * dy + gains.L[0] * q[1];
    EXPECT_LT(max_abs(rhc.local_step(0, dy, t) - expect), 1e-6 * (1.0 + expect.norm())) << "instance " << rep;
  }
}

TEST(DistributedRhc, WideGlobalStepWithoutAggregateWeightTracksMean)
{
  const auto pop = scalar_pop({1, 1}, {1, 1}, 4, {0, 0}, {1, 3});
  const auto model = SystemModel::time_invariant(4, s1(1), s1(1));
  const auto w = CostWeights::time_invariant(4, s1(1), s1(1), s1(0), s1(0), v1(0));
  DistributedRhc rhc(model, w, pop, wide_box(1, 1), RhcSettings{3, 0.5});
  // μ = 1: tracking r̄ = 2 with weights Q, R, window 1..4
  const std::vector<Mat> W(4, s1(1)), R(3, s1(1));
  const std::vector<Vec> l(4, v1(2));
  const auto gains = solve_riccati(model, 1, W, R);
  const auto q = solve_affine(model, gains, l);
  const double expect = gains.theta[0](0, 0) * 0.5 + (gains.L[0] * q[1])[0];
  EXPECT_NEAR(rhc.global_step(v1(0.5), 1)[0], expect, 1e-7);
}

TEST(RhcRollout, MatchesLqrWithWideBoundsAndFullHorizon)
{
  std::mt19937_64 gen(33);
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = instances::random_rhc(gen, BoundRegime::PositiveFactors, 10);
    // μ = 1 with |α_i| ≤ 1 forces α_i = ±1, γ_i = 1; the signs still make the aggregate nontrivial
    std::vector<AgentProfile> agents = inst.population.agents();
    for (auto & a : agents) {
      a.alpha = oracle::uniform_int(gen, 0, 1) == 0 ? -1.0 : 1.0;
      a.gamma = 1.0;
    }
    const Population pop(agents);
    ASSERT_NEAR(mu(pop), 1.0, 1e-14);
    RhcSettings st;
    st.horizon = inst.model.horizon();
    st.regime = BoundRegime::SignedFactors;
    const auto bounds = wide_box(inst.model.state_dim(), inst.model.action_dim());
    const auto rhc = rhc_rollout(inst.model, inst.weights, pop, bounds, st);
    const auto lqr = rollout_lqr(inst.model, inst.weights, pop);
    for (int t = 0; t < inst.model.horizon(); ++t) {
      for (std::size_t i = 0; i < pop.size(); ++i) {
        EXPECT_LT(max_abs(rhc.states[t][i] - lqr.states[t][i]), 1e-5) << "instance " << rep << " t " << t + 1;
      }
    }
  }
}

TEST(RhcRollout, FeasibilitySuite)
{
  std::mt19937_64 gen(34);
  for (auto regime : {BoundRegime::PositiveFactors, BoundRegime::SignedFactors}) {
    for (int rep = 0; rep < 15; ++rep) {
      const auto inst = instances::random_rhc(gen, regime);
      RhcSettings st = inst.settings;
      const auto log = rhc_rollout(inst.model, inst.weights, inst.population, inst.bounds, st);
      ASSERT_TRUE(log.margins.has_value());
      EXPECT_LE(log.margins->max_violation(), 1e-6) << to_string(regime) << " instance " << rep;
      EXPECT_EQ(log.info.controller, "rhc");
      EXPECT_FALSE(log.info.certainty_equivalence_approximation);
    }
  }
}

TEST(RhcRollout, HorizonLongerThanProblem)
{
  std::mt19937_64 gen(35);
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = instances::random_rhc(gen, BoundRegime::PositiveFactors, 6);
    inst.settings.horizon = inst.model.horizon() + 5;
    const auto log = rhc_rollout(inst.model, inst.weights, inst.population, inst.bounds, inst.settings);
    EXPECT_LE(log.margins->max_violation(), 1e-6);
    for (const auto & u : log.actions.back()) { EXPECT_TRUE(u.isZero()); }
  }
}

TEST(RhcRollout, DeepStateStaysInEffectiveBox)
{
  std::mt19937_64 gen(36);
  for (int rep = 0; rep < 15; ++rep) {
    const auto inst = instances::random_rhc(gen, BoundRegime::PositiveFactors);
    const auto log = rhc_rollout(inst.model, inst.weights, inst.population, inst.bounds, inst.settings);
    const double abar = inst.population.mean_alpha();
    const auto & b = inst.bounds;
    const Vec lo = (abar * b.a).cwiseMax(b.abar), hi = (abar * b.b).cwiseMin(b.bbar);
    for (const auto & xb : log.deep_states) {
      EXPECT_GE((xb - lo).minCoeff(), -1e-6);
      EXPECT_LE((xb - hi).maxCoeff(), 1e-6);
    }
  }
}

TEST(RhcRollout, WarmStartDoesNotChangeResult)
{
  std::mt19937_64 gen(37);
  const auto inst = instances::random_rhc(gen, BoundRegime::SignedFactors, 12);
  RhcSettings cold = inst.settings;
  cold.warm_start = false;
  const auto a = rhc_rollout(inst.model, inst.weights, inst.population, inst.bounds, inst.settings);
  const auto b = rhc_rollout(inst.model, inst.weights, inst.population, inst.bounds, cold);
  for (int t = 0; t < inst.model.horizon(); ++t) {
    for (std::size_t i = 0; i < inst.population.size(); ++i) {
      EXPECT_LT(max_abs(a.states[t][i] - b.states[t][i]), 1e-6);
    }
  }
}

TEST(RhcRollout, NoiseMarksApproximation)
{
  std::mt19937_64 gen(38);
  const auto inst = instances::random_rhc(gen, BoundRegime::PositiveFactors, 5);
  const Disturbance tiny = [&](std::size_t, int) { return Vec::Zero(inst.model.state_dim()); };
  const auto log = rhc_rollout(inst.model, inst.weights, inst.population, inst.bounds, inst.settings, tiny);
  EXPECT_TRUE(log.info.noise);
  EXPECT_TRUE(log.info.certainty_equivalence_approximation);
}
