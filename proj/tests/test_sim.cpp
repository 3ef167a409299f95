#include <gtest/gtest.h>

#include <random>

#include "dstrack/sim.hpp"
#include "instances.hpp"

using namespace dstrack;

namespace {

ScenarioConfig small_lqr(std::mt19937_64 & gen, int n = 3, int T = 6)
{
  auto inst = instances::random_team(gen, n, 2, 1, T);
  ScenarioConfig cfg;
  cfg.name = "small";
  cfg.model = inst.model;
  cfg.weights = inst.weights;
  cfg.population = inst.population;
  return cfg;
}

ScenarioConfig small_rhc(std::mt19937_64 & gen)
{
  auto inst = instances::random_rhc(gen, BoundRegime::PositiveFactors, 10, 4);
  ScenarioConfig cfg;
  cfg.model = inst.model;
  cfg.weights = inst.weights;
  cfg.population = inst.population;
  cfg.controller.kind = ControllerKind::Rhc;
  cfg.controller.horizon = inst.settings.horizon;
  cfg.controller.lambda = inst.settings.lambda;
  cfg.bounds = inst.bounds;
  return cfg;
}

bool same_log(const TrajectoryLog & a, const TrajectoryLog & b)
{
  if (a.horizon != b.horizon || a.agents != b.agents) { return false; }
  for (int t = 0; t < a.horizon; ++t) {
    for (std::size_t i = 0; i < a.agents; ++i) {
      if (a.states[t][i] != b.states[t][i] || a.actions[t][i] != b.actions[t][i]) { return false; }
    }
  }
  return a.cumulative_costs == b.cumulative_costs;
}

}  // namespace

TEST(Run, LqrMatchesBruteForce)
{
  std::mt19937_64 gen(51);
  for (int rep = 0; rep < 5; ++rep) {
    auto cfg = small_lqr(gen);
    const auto log = run(cfg);
    const auto best = oracle::team_optimum(cfg.model, cfg.weights, cfg.population);
    EXPECT_NEAR(metrics(log, cfg).total_cost, best.cost, 1e-8 * (1.0 + std::abs(best.cost)));
  }
}

TEST(Run, DeepColumnsMatchStates)
{
  std::mt19937_64 gen(52);
  const auto cfg = small_rhc(gen);
  const auto log = run(cfg);
  const auto pop = effective_population(cfg);
  for (int t = 0; t < log.horizon; ++t) {
    EXPECT_LT((log.deep_states[t] - deep_state(pop, log.states[t])).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((log.deep_actions[t] - deep_action(pop, log.actions[t])).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Run, Deterministic)
{
  std::mt19937_64 gen(53);
  auto cfg = small_lqr(gen, 4, 8);
  cfg.noise = NoiseSpec{Vec::Constant(2, 0.1), 99};
  EXPECT_TRUE(same_log(run(cfg), run(cfg)));
  auto other = cfg;
  other.noise->seed = 100;
  EXPECT_FALSE(same_log(run(cfg), run(other)));
  const auto rhc = small_rhc(gen);
  EXPECT_TRUE(same_log(run(rhc), run(rhc)));
}

TEST(Run, NoiseIsAppliedAndFlagged)
{
  std::mt19937_64 gen(54);
  auto cfg = small_lqr(gen);
  const auto clean = run(cfg);
  cfg.noise = NoiseSpec{Vec::Constant(2, 0.05), 1};
  const auto noisy = run(cfg);
  EXPECT_FALSE(same_log(clean, noisy));
  EXPECT_TRUE(noisy.info.noise);
  // the unconstrained controller stays optimal under certainty equivalence
  EXPECT_FALSE(noisy.info.certainty_equivalence_approximation);
  // the initial states are not perturbed
  for (std::size_t i = 0; i < cfg.population.size(); ++i) { EXPECT_TRUE(noisy.states[0][i] == clean.states[0][i]); }
}

TEST(Run, ZeroNoiseMatchesNoiseFree)
{
  std::mt19937_64 gen(55);
  auto cfg = small_lqr(gen);
  const auto clean = run(cfg);
  cfg.noise = NoiseSpec{Vec::Zero(2), 5};
  EXPECT_TRUE(same_log(clean, run(cfg)));
}

TEST(Validate, ControllerAndBounds)
{
  std::mt19937_64 gen(56);
  auto rhc = small_rhc(gen);
  rhc.bounds.reset();
  try {
    validate(rhc);
    FAIL();
  } catch (const InputError & e) {
    EXPECT_STREQ(e.what(), "RHC requires bounds");
  }
  auto lqr = small_lqr(gen);
  lqr.bounds = small_rhc(gen).bounds;
  lqr.bounds->a = lqr.bounds->a.head(1);
  EXPECT_THROW(validate(lqr), InputError);
}

TEST(Validate, NoiseAndTarget)
{
  std::mt19937_64 gen(57);
  auto cfg = small_lqr(gen);
  cfg.noise = NoiseSpec{Vec::Constant(3, 0.1), 0};
  EXPECT_THROW(validate(cfg), InputError);
  cfg.noise = NoiseSpec{Vec::Constant(2, -0.1), 0};
  EXPECT_THROW(validate(cfg), InputError);
  cfg.noise.reset();
  cfg.target = Vec::Zero(1);
  EXPECT_THROW(validate(cfg), InputError);
}

TEST(Validate, SingularInputWeight)
{
  auto cfg = example1_config(Example1Variant::Unconstrained, {.agents = 3, .horizon = 4, .R = Mat::Zero(2, 2)});
  try {
    validate(cfg);
    FAIL();
  } catch (const AssumptionError & e) {
    EXPECT_NE(std::string(e.what()).find("R_t not positive definite at t=1"), std::string::npos) << e.what();
  }
}

TEST(EffectivePopulation, GammaFollowsAttackedFactor)
{
  Example1Parameters p;
  p.agents = 5;
  p.horizon = 3;
  p.rho = 0.5;
  const auto cfg = example1_config(Example1Variant::Attacked, p);
  const auto pop = effective_population(cfg);
  EXPECT_NEAR(pop.mean_alpha(), 1.0, 1e-12);
  for (const auto & a : pop.agents()) { EXPECT_EQ(a.alpha, a.gamma); }
  EXPECT_NEAR(pop[0].alpha, 2.5, 1e-15);
}

TEST(Metrics, ZeroTrajectory)
{
  ScenarioConfig cfg;
  cfg.model = SystemModel::time_invariant(3, Mat::Identity(1, 1), Mat::Identity(1, 1));
  cfg.weights = CostWeights::time_invariant(3, Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Identity(1, 1),
                                            Mat::Zero(1, 1), Vec::Zero(1));
  AgentProfile a;
  a.initial_state = Vec::Zero(1);
  a.reference.assign(3, Vec::Zero(1));
  cfg.population = Population(std::vector<AgentProfile>{a, a});
  const auto m = metrics(run(cfg), cfg);
  EXPECT_EQ(m.final_tracking_error, 0.0);
  EXPECT_EQ(m.max_constraint_violation, 0.0);
  EXPECT_EQ(m.total_cost, 0.0);
  for (double d : m.max_deviation_from_center) { EXPECT_EQ(d, 0.0); }
}

TEST(Example1, CostConversion)
{
  std::mt19937_64 gen(58);
  Example1Parameters p;
  p.agents = 7;
  p.horizon = 1;
  const auto w = example1_weights(p);
  for (int rep = 0; rep < 200; ++rep) {
    // factors averaging to one, γ = α
    std::vector<AgentProfile> agents;
    double sum = 0.0;
    for (int i = 0; i < p.agents; ++i) {
      AgentProfile a;
      a.alpha = oracle::uniform(gen, 0.1, 2.0);
      sum += a.alpha;
      a.initial_state = Vec::Zero(2);
      a.reference = {Vec::Zero(2)};
      agents.push_back(a);
    }
    for (auto & a : agents) { a.gamma = a.alpha = a.alpha * p.agents / sum; }
    const Population pop(agents);
    std::vector<Vec> xs, us;
    for (int i = 0; i < p.agents; ++i) {
      xs.push_back(oracle::random_vector(gen, 2, 3));
      us.push_back(oracle::random_vector(gen, 2, 1));
    }
    const double native = example1_native_step_cost(p, pop, xs, us);
    const double canonical = per_step_cost(w, pop, xs, us, 1);
    EXPECT_NEAR(native, canonical, 1e-9 * (1.0 + std::abs(native)));
  }
}

TEST(Example1, UnconstrainedReachesTarget)
{
  const auto cfg = example1_config(Example1Variant::Unconstrained);
  const auto log = run(cfg);
  const auto m = metrics(log, cfg);
  EXPECT_LE(m.final_tracking_error, 0.05);
  EXPECT_EQ(log.agents, 100u);
  EXPECT_EQ(log.horizon, 100);
}

TEST(Example1, ProtectionPullsCenterTowardAttackedRobot)
{
  Example1Parameters p;
  p.agents = 20;
  p.horizon = 40;
  const auto distance = [&](double rho) {
    p.rho = rho;
    const auto log = run(example1_config(Example1Variant::Attacked, p));
    return (log.deep_states.back() - log.states.back()[p.attacked_agent]).norm();
  };
  EXPECT_LT(distance(0.9), distance(0.1));
}
