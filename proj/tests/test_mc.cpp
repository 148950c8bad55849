#include <gtest/gtest.h>

#include <sstream>

#include "hopmeta/mc.hpp"
#include "hopmeta/oracle.hpp"

using namespace hopmeta;

namespace {

JumpTable two_state(double r) {
  JumpTable t;
  t.add_row({{1, r}});
  t.add_row({{0, 1.0}});
  return t;
}

}  // namespace

TEST(SimulateHits, GeometricLaw) {
  McOptions opt;
  opt.trajectories = 10000;
  opt.seed = 17;
  auto r = simulate_hits(two_state(0.05), StartLaw::fixed(0), {1}, opt);
  EXPECT_EQ(r.samples.size(), 10000u);
  EXPECT_LT(std::abs(r.mean - 20.0), 3 * r.std_error);
  for (auto s : r.samples) EXPECT_GE(s, 1u);
  EXPECT_LE(r.ci_low, r.mean);
  EXPECT_GE(r.ci_high, r.mean);
}

TEST(SimulateHits, DeterministicAcrossThreadCounts) {
  McOptions a, b;
  a.trajectories = b.trajectories = 500;
  a.threads = 1;
  b.threads = 3;
  auto x = simulate_hits(two_state(0.1), StartLaw::fixed(0), {1}, a);
  auto y = simulate_hits(two_state(0.1), StartLaw::fixed(0), {1}, b);
  EXPECT_EQ(x.samples, y.samples);
  a.seed = 2;
  EXPECT_NE(simulate_hits(two_state(0.1), StartLaw::fixed(0), {1}, a).samples, x.samples);
}

TEST(SimulateHits, MatchesExactMeanOnSmallModel) {
  TypeTable t({{-1.0}, {1.0}}, {9, 11});
  LatticeChain c(t, 1.0, Potential::hopfield(1));
  auto g = conductance_graph(c);
  std::vector<std::size_t> A{c.lattice().index(LatticePoint{{9, 1}})}, B{c.lattice().index(LatticePoint{{0, 10}})};
  auto rep = capacity_report(g, A, B);
  McOptions opt;
  opt.trajectories = 4000;
  opt.seed = 5;
  auto r = simulate_hits(jump_table(c), StartLaw::from(rep.hitting), B, opt);
  const double exact = std::exp(rep.hitting.log_mean);
  EXPECT_LT(std::abs(r.mean - exact), 3 * r.std_error) << r.mean << " vs " << exact;
}

TEST(SimulateHits, StandardErrorScalesWithTrajectories) {
  McOptions opt;
  opt.trajectories = 4000;
  auto a = simulate_hits(two_state(0.02), StartLaw::fixed(0), {1}, opt);
  opt.trajectories = 8000;
  opt.seed = 99;
  auto b = simulate_hits(two_state(0.02), StartLaw::fixed(0), {1}, opt);
  EXPECT_NEAR(a.std_error / b.std_error, std::sqrt(2.0), 0.2 * std::sqrt(2.0));
}

TEST(SimulateHits, CensoringAndBudget) {
  McOptions opt;
  opt.trajectories = 50;
  opt.max_steps = 5;
  auto r = simulate_hits(two_state(0.01), StartLaw::fixed(0), {1}, opt);
  EXPECT_TRUE(r.partial());
  EXPECT_EQ(r.samples.size() + r.censored.size(), 50u);
  std::ostringstream os;
  write_samples_csv(os, r);
  EXPECT_EQ(os.str().rfind("trajectory,tau,censored\n", 0), 0u);
  opt.predicted_mean = 1e12;
  EXPECT_THROW(simulate_hits(two_state(0.01), StartLaw::fixed(0), {1}, opt), ValidationError);
  EXPECT_THROW(simulate_hits(two_state(0.01), StartLaw::fixed(1), {1}), ValidationError);
}

TEST(KolmogorovSmirnov, ExponentialSamplesPassAndUniformFail) {
  CounterRng rng(4, 0);
  std::vector<double> e, u;
  for (int i = 0; i < 3000; ++i) {
    e.push_back(-std::log(1.0 - rng.uniform()));
    u.push_back(rng.uniform());
  }
  EXPECT_GT(ks_exponential(e).second, 0.01);
  EXPECT_LT(ks_exponential(u).second, 0.01);
  EXPECT_NEAR(kolmogorov_survival(1.36), 0.049, 0.002);
}
