#include <gtest/gtest.h>

#include <random>

#include "dstrack/gauge.hpp"
#include "instances.hpp"

using namespace dstrack;

namespace {

Population scalar_pop(const std::vector<double> & alpha, const std::vector<double> & gamma)
{
  std::vector<AgentProfile> agents;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    AgentProfile a;
    a.alpha = alpha[i];
    a.gamma = gamma[i];
    a.initial_state = Vec::Zero(1);
    a.reference = {Vec::Zero(1)};
    agents.push_back(a);
  }
  return Population(agents);
}

struct RandomSample
{
  Population pop;
  CostWeights w;
  std::vector<Vec> xs, us, rs;
};

RandomSample random_sample(std::mt19937_64 & gen)
{
  const int n = oracle::uniform_int(gen, 1, 5);
  const int dx = oracle::uniform_int(gen, 1, 3);
  const int du = oracle::uniform_int(gen, 1, 3);
  auto inst = instances::random_team(gen, n, dx, du, 1);
  RandomSample s{inst.population, inst.weights, {}, {}, {}};
  for (int i = 0; i < n; ++i) {
    s.xs.push_back(oracle::random_vector(gen, dx, 2));
    s.us.push_back(oracle::random_vector(gen, du, 2));
    s.rs.push_back(inst.population[i].reference[0]);
  }
  return s;
}

}  // namespace

TEST(Gauge, HomogeneousIsDeviationFromMean)
{
  const auto pop = scalar_pop({1, 1, 1}, {1, 1, 1});
  const std::vector<Vec> xs{Vec::Constant(1, 1), Vec::Constant(1, 2), Vec::Constant(1, 6)};
  const auto f = to_gauge(pop, xs, xs, xs);
  EXPECT_DOUBLE_EQ(f.deep_state[0], 3.0);
  EXPECT_DOUBLE_EQ(f.delta_states[0][0], -2.0);
  EXPECT_DOUBLE_EQ(f.delta_states[2][0], 3.0);
}

TEST(Gauge, SingleAgentCollapses)
{
  const auto pop = scalar_pop({1}, {1});
  const std::vector<Vec> xs{Vec::Constant(1, 4.2)};
  EXPECT_EQ(to_gauge(pop, xs, xs, xs).delta_states[0][0], 0.0);
}

TEST(Gauge, HandExample)
{
  const auto pop = scalar_pop({2, 0}, {1, 1});
  const std::vector<Vec> xs{Vec::Constant(1, 1), Vec::Constant(1, 3)};
  const auto f = to_gauge(pop, xs, xs, xs);
  EXPECT_DOUBLE_EQ(f.deep_state[0], 1.0);
  EXPECT_DOUBLE_EQ(f.delta_states[0][0], -1.0);
  EXPECT_DOUBLE_EQ(f.delta_states[1][0], 3.0);
}

TEST(Gauge, FromGaugeHandExample)
{
  const auto pop = scalar_pop({0.5}, {1.0});
  GaugeFrame f;
  f.delta_states = {Vec::Zero(1)};
  f.delta_actions = {Vec::Constant(1, 0.1)};
  f.deep_state = Vec::Zero(1);
  f.deep_action = Vec::Constant(1, -0.05);
  EXPECT_NEAR(from_gauge(pop, f).actions[0][0], 0.075, 1e-16);
}

TEST(Gauge, ZeroFrameGivesZero)
{
  const auto pop = scalar_pop({0.5, 2}, {1.0, 3});
  GaugeFrame f;
  f.delta_states = f.delta_actions = {Vec::Zero(1), Vec::Zero(1)};
  f.deep_state = f.deep_action = Vec::Zero(1);
  const auto s = from_gauge(pop, f);
  EXPECT_TRUE(s.states[1].isZero() && s.actions[0].isZero());
}

TEST(Gauge, RoundTripAndReconstruction)
{
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 50; ++rep) {
    const auto s = random_sample(gen);
    const auto f = to_gauge(s.pop, s.xs, s.us, s.rs);
    const auto back = from_gauge(s.pop, f);
    for (std::size_t i = 0; i < s.pop.size(); ++i) {
      const double k = s.pop[i].alpha / s.pop[i].gamma;
      EXPECT_LT((back.states[i] - s.xs[i]).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((back.actions[i] - s.us[i]).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((f.delta_references[i] + k * f.deep_reference - s.rs[i]).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Gauge, DecomposedCostMatchesOriginal)
{
  std::mt19937_64 gen(12);
  for (int rep = 0; rep < 200; ++rep) {
    const auto s = random_sample(gen);
    const double m = mu(s.pop);
    const auto f = to_gauge(s.pop, s.xs, s.us, s.rs);
    const double direct = per_step_cost(s.w, s.pop, s.xs, s.us, 1);
    const double split = decomposed_step_cost(s.w, s.pop, f, 1, m);
    EXPECT_LE(std::abs(direct - split), 1e-9 * (1.0 + std::abs(direct)));
  }
}

TEST(Gauge, AllZeroCostIsZero)
{
  const auto pop = scalar_pop({0.5, 2}, {1.0, 3});
  const auto w = CostWeights::time_invariant(1, Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Identity(1, 1),
                                             Mat::Identity(1, 1), Vec::Zero(1));
  const std::vector<Vec> z{Vec::Zero(1), Vec::Zero(1)};
  const auto f = to_gauge(pop, z, z, z);
  EXPECT_EQ(decomposed_step_cost(w, pop, f, 1, mu(pop)), 0.0);
  EXPECT_EQ(per_step_cost(w, pop, z, z, 1), 0.0);
}

TEST(Gauge, HomogeneousScalarHandExpansion)
{
  // n=2, α=γ=1, Q=R=1, Q̄=R̄=0, s=0, x=(1,3), u=(0,2), r=(0,0):
  // direct: ½[(1+0) + (9+4)] = 7
  // split: x̄=2, ū=1, Δx=(−1,1), Δu=(−1,1): ½[(1+1)+(1+1)] + ‖2‖ + ‖1‖ = 2 + 4 + 1 = 7
  const auto pop = scalar_pop({1, 1}, {1, 1});
  const auto w = CostWeights::time_invariant(1, Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Zero(1, 1),
                                             Mat::Zero(1, 1), Vec::Zero(1));
  const std::vector<Vec> xs{Vec::Constant(1, 1), Vec::Constant(1, 3)};
  const std::vector<Vec> us{Vec::Constant(1, 0), Vec::Constant(1, 2)};
  const std::vector<Vec> rs{Vec::Zero(1), Vec::Zero(1)};
  EXPECT_DOUBLE_EQ(per_step_cost(w, pop, xs, us, 1), 7.0);
  EXPECT_DOUBLE_EQ(decomposed_step_cost(w, pop, to_gauge(pop, xs, us, rs), 1, 1.0), 7.0);
}

TEST(Gauge, CrossTermAndAggregateIdentities)
{
  std::mt19937_64 gen(13);
  for (int rep = 0; rep < 50; ++rep) {
    const auto s = random_sample(gen);
    const double m = mu(s.pop);
    const auto f = to_gauge(s.pop, s.xs, s.us, s.rs);
    const Mat & Q = s.w.Q(1);
    const Vec track = f.deep_state - f.deep_reference;
    const double n = static_cast<double>(s.pop.size());
    double cross = 0.0;
    Vec agg = Vec::Zero(f.deep_state.size());
    for (std::size_t i = 0; i < s.pop.size(); ++i) {
      cross += s.pop[i].alpha * (f.delta_states[i] - f.delta_references[i]).dot(Q * track) / n;
      agg += s.pop[i].alpha * f.delta_states[i] / n;
    }
    EXPECT_NEAR(cross, (1.0 - m) * quad(track, Q), 1e-9 * (1.0 + std::abs(cross)));
    EXPECT_LT((agg - (1.0 - m) * f.deep_state).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + agg.norm()));
  }
}

TEST(Gauge, TransformedDynamics)
{
  std::mt19937_64 gen(14);
  auto inst = instances::random_team(gen, 4, 2, 2, 6);
  const auto & pop = inst.population;
  std::vector<Vec> xs;
  for (const auto & a : pop.agents()) { xs.push_back(a.initial_state); }
  std::vector<Vec> rs(pop.size(), Vec::Zero(2));
  for (int t = 1; t < 6; ++t) {
    std::vector<Vec> us;
    for (std::size_t i = 0; i < pop.size(); ++i) { us.push_back(oracle::random_vector(gen, 2)); }
    const auto f = to_gauge(pop, xs, us, rs);
    std::vector<Vec> next;
    for (std::size_t i = 0; i < pop.size(); ++i) { next.push_back(inst.model.step(t, xs[i], us[i])); }
    const auto g = to_gauge(pop, next, us, rs);
    const Vec xbar_pred = inst.model.step(t, f.deep_state, f.deep_action);
    EXPECT_LT((g.deep_state - xbar_pred).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + xbar_pred.norm()));
    for (std::size_t i = 0; i < pop.size(); ++i) {
      const Vec pred = inst.model.step(t, f.delta_states[i], f.delta_actions[i]);
      EXPECT_LT((g.delta_states[i] - pred).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + pred.norm()));
    }
    xs = next;
  }
}
