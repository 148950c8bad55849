#include <gtest/gtest.h>

#include "hopmeta/chain.hpp"

using namespace hopmeta;

namespace {

PatternEnsemble rfcw(std::size_t n) {
  return expected_patterns({PatternDistribution::dirac(1.0), PatternDistribution::uniform({-1.0, 1.0})}, n);
}

}  // namespace

TEST(LatticeChain, RatesFromCounts) {
  TypeTable t({{-1.0}, {1.0}}, {4, 6});
  LatticeChain c(t, 1.0, Potential::hopfield(1));
  const std::size_t i = c.lattice().index(LatticePoint{{1, 5}});
  // lowering k of type 1 from 5: X goes from (2*5-6 - (2*1-4))/10 = 0.6 to 0.4
  const double expected = 5.0 / 10.0 * std::exp(-10.0 * (0.36 - 0.16));
  EXPECT_NEAR(c.rate(i, 2), expected, 1e-15);
  EXPECT_NEAR(c.log_rate(i, 2), std::log(expected), 1e-13);
  EXPECT_NEAR(c.rate(i, 3), 1.0 / 10.0, 1e-15);
  EXPECT_EQ(c.movable(i, 1), 3);
  EXPECT_FALSE(c.neighbor(c.lattice().index(LatticePoint{{0, 0}}), 0).has_value());
  EXPECT_EQ(c.log_rate(c.lattice().index(LatticePoint{{4, 6}}), 1), -kInf);
}

TEST(LumpCheck, DiracPatternPushforwardIsExact) {
  for (std::size_t n : {6u, 8u}) {
    auto e = sample_patterns({PatternDistribution::dirac(1.0)}, n, 1);
    SpinChain spins(e, 1.3, Potential::hopfield(1));
    LatticeChain chain(spins.table(), 1.3, Potential::hopfield(1));
    LumpCheck r = lump_check(chain, spins);
    EXPECT_LT(r.max_rate_error, 1e-12);
    EXPECT_LT(r.max_holding_error, 1e-12);
    EXPECT_LT(r.max_weight_error, 1e-12);
    EXPECT_EQ(r.transitions, 2 * n);
  }
}

TEST(LumpCheck, RandomFieldPushforwardIsExact) {
  auto e = rfcw(10);
  SpinChain spins(e, 1.0, Potential::random_field(2, 0.4));
  LatticeChain chain(spins.table(), 1.0, Potential::random_field(2, 0.4));
  ASSERT_EQ(chain.table().size(), 2u);
  LumpCheck r = lump_check(chain, spins);
  EXPECT_LT(r.max_rate_error, 1e-12);
  EXPECT_LT(r.max_holding_error, 1e-12);
  EXPECT_LT(r.max_weight_error, 1e-12);
}

TEST(ChainCheck, DetailedBalanceStochasticIrreducible) {
  TypeTable t({{-1.0, 1.0}, {1.0, -0.5}, {1.0, 1.0}}, {7, 9, 5});
  LatticeChain c(t, 1.7, Potential::hopfield(2));
  ChainCheck r = check_chain(c);
  EXPECT_LT(r.max_balance_error, 1e-12);
  EXPECT_TRUE(r.stochastic);
  EXPECT_TRUE(r.irreducible);
  EXPECT_GE(r.min_holding, 0.0);
}

TEST(SpinChain, RejectsLargeSystems) {
  auto e = sample_patterns({PatternDistribution::dirac(1.0)}, 30, 1);
  EXPECT_THROW(SpinChain(e, 1.0, Potential::hopfield(1)), ValidationError);
}
