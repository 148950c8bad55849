#include <gtest/gtest.h>

#include "hopmeta/oracle.hpp"
#include "hopmeta/potential.hpp"

using namespace hopmeta;

namespace {

struct OneType {
  TypeTable table;
  LatticeChain chain;
  oracle::BirthDeath bd;
  OneType(long n, double beta)
      : table({{1.0}}, {n}),
        chain(table, beta, Potential::hopfield(1)),
        bd(n, beta, 1.0, [](double x) { return x * x; }) {}
  std::size_t at(long k) const { return chain.lattice().index(LatticePoint{{k}}); }
};

}  // namespace

TEST(SolveHarmonic, BirthDeathCapacityAndCommittor) {
  for (long n : {40L, 400L}) {
    OneType m(n, 1.0);
    const long a = static_cast<long>(0.0212 * n), b = n / 2;
    auto g = conductance_graph(m.chain);
    for (bool cg : {false, true}) {
      if (cg && n > 100) continue;  // conductances span too many decades for CG
      SolverOptions opt;
      opt.force_cg = cg;
      opt.prune = false;
      auto h = solve_harmonic(g, {m.at(a)}, {m.at(b)}, opt);
      EXPECT_NEAR(h.log_capacity, m.bd.log_capacity(a, b), 1e-8 * std::abs(m.bd.log_capacity(a, b))) << n << cg;
      for (long k = a; k <= b; k += std::max(1L, n / 40)) {
        const double ref = m.bd.phi(a, b, k);
        EXPECT_NEAR(h.phi[m.at(k)], ref, cg ? 1e-8 : 1e-10 * std::max(ref, 1e-300) + 1e-300) << n << " k=" << k;
      }
    }
  }
}

TEST(SolveHarmonic, FluxDirichletAndHittingAgree) {
  OneType m(200, 1.0);
  auto g = conductance_graph(m.chain);
  auto rep = capacity_report(g, {m.at(4)}, {m.at(100)});
  EXPECT_NEAR(rep.log_capacity_flux, rep.log_capacity, 1e-9);
  EXPECT_NEAR(rep.log_capacity_dirichlet, rep.log_capacity, 1e-9);
  EXPECT_NEAR(rep.hitting.log_mean, m.bd.log_mean_hit(4, 100), 1e-9);
  ASSERT_EQ(rep.hitting.nu.size(), 1u);
  EXPECT_DOUBLE_EQ(rep.hitting.nu[0], 1.0);
}

TEST(SolveHarmonic, TwoTypeMatchesSparseLuOracle) {
  TypeTable t({{-1.0}, {1.0}}, {12, 14});
  LatticeChain c(t, 1.0, Potential::hopfield(1));
  auto g = conductance_graph(c);
  std::vector<std::size_t> A{c.lattice().index(LatticePoint{{11, 1}}), c.lattice().index(LatticePoint{{12, 1}})};
  std::vector<std::size_t> B{c.lattice().index(LatticePoint{{1, 13}})};
  auto rep = capacity_report(g, A, B);
  auto mv = oracle::moves(c);
  auto h = oracle::committor(c.size(), mv, A, B);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(rep.solution.phi[i], h[i], 1e-10);
  const double cap = oracle::capacity(mv, [&](std::size_t i) { return std::exp(c.measure().log_q(i)); }, A, h);
  EXPECT_NEAR(rep.log_capacity, std::log(cap), 1e-9);
  auto et = oracle::mean_hitting(c.size(), mv, B);
  double mean = 0.0;
  for (std::size_t k = 0; k < rep.hitting.support.size(); ++k) mean += rep.hitting.nu[k] * et[rep.hitting.support[k]];
  EXPECT_NEAR(rep.hitting.log_mean, std::log(mean), 1e-9);
}

TEST(SolveHarmonic, PruningDoesNotMoveTheCapacity) {
  TypeTable t({{-1.0}, {1.0}}, {90, 110});
  LatticeChain c(t, 1.0, Potential::hopfield(1));
  auto g = conductance_graph(c);
  std::vector<std::size_t> A{c.lattice().index(LatticePoint{{88, 2}})}, B{c.lattice().index(LatticePoint{{2, 108}})};
  SolverOptions on, off;
  on.prune_log10 = 40;  // well below the saddle, above the far corners
  off.prune = false;
  auto a = solve_harmonic(g, A, B, on), b = solve_harmonic(g, A, B, off);
  EXPECT_NEAR(a.log_capacity, b.log_capacity, 1e-10);
  EXPECT_GT(a.stats.pruned, 0u);
  EXPECT_EQ(b.stats.pruned, 0u);
}

TEST(SolveHarmonic, Validation) {
  OneType m(10, 1.0);
  auto g = conductance_graph(m.chain);
  EXPECT_THROW(solve_harmonic(g, {m.at(1)}, {m.at(1)}), ValidationError);
  EXPECT_THROW(solve_harmonic(g, {}, {m.at(1)}), ValidationError);
  EXPECT_THROW(solve_harmonic(g, {99}, {m.at(1)}), ValidationError);
}

TEST(SolveHarmonic, SpinHypercubeUsesIterativeSolver) {
  auto e = sample_patterns({PatternDistribution::dirac(1.0)}, 10, 1);
  SpinChain s(e, 1.0, Potential::hopfield(1));
  auto g = conductance_graph(s);
  auto h = solve_harmonic(g, {0}, {(std::size_t{1} << 10) - 1});
  auto mv = oracle::moves(s);
  auto ref = oracle::committor(s.size(), mv, {0}, {(std::size_t{1} << 10) - 1});
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(h.phi[i], ref[i], 1e-9);
}
