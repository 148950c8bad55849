#include <gtest/gtest.h>

#include "hopmeta/model.hpp"
#include "hopmeta/rng.hpp"

using namespace hopmeta;

TEST(Potential, HopfieldAndRandomField) {
  Vec x(2);
  x << 0.3, -0.4;
  Potential h = Potential::hopfield(2);
  EXPECT_DOUBLE_EQ(h.value(x), 0.25);
  EXPECT_DOUBLE_EQ(h.gradient(x)[1], -0.8);
  EXPECT_DOUBLE_EQ(h.hessian(x)(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(h.hessian(x)(0, 1), 0.0);
  Potential r = Potential::random_field(2, 0.7);
  EXPECT_DOUBLE_EQ(r.value(x), 0.09 - 0.28);
  EXPECT_DOUBLE_EQ(r.gradient(x)[1], 0.7);
  EXPECT_THROW(h.value(Vec::Zero(3)), ValidationError);
}

TEST(Potential, MixedMonomialDerivativesMatchFiniteDifferences) {
  Potential v(2, {{1.5, {2, 1}}, {-0.5, {0, 3}}, {0.25, {1, 1}}});
  Vec x(2);
  x << 0.2, -0.6;
  const double h = 1e-5;
  for (int i = 0; i < 2; ++i) {
    Vec e = Vec::Zero(2);
    e[i] = h;
    EXPECT_NEAR(v.gradient(x)[i], (v.value(x + e) - v.value(x - e)) / (2 * h), 1e-8);
    for (int j = 0; j < 2; ++j)
      EXPECT_NEAR(v.hessian(x)(i, j), (v.gradient(x + e)[j] - v.gradient(x - e)[j]) / (2 * h), 1e-7);
  }
}

TEST(Projection, LatticeAndSpinOrderParametersAgreeBitwise) {
  auto e = sample_patterns({PatternDistribution({-1.0, 0.25, 1.0}, {0.3, 0.3, 0.4}), PatternDistribution::uniform({-1.0, 1.0})}, 40, 11);
  TypeTable t = type_decomposition(e);
  CounterRng rng(5, 0);
  for (int trial = 0; trial < 50; ++trial) {
    SpinConfig s(e.n);
    for (auto& x : s) x = rng.uniform() < 0.5 ? -1 : 1;
    Vec a = order_params(s, e), b = project(lift(s, t), t);
    for (Eigen::Index j = 0; j < a.size(); ++j) EXPECT_EQ(a[j], b[j]);
    EXPECT_EQ(hamiltonian(s, e, Potential::hopfield(2)), hamiltonian(lift(s, t), t, Potential::hopfield(2)));
  }
}

TEST(Lattice, IndexRoundTripAndBandwidth) {
  TypeTable t({{-1.0}, {0.0}, {1.0}}, {3, 7, 2});
  Lattice lat(t);
  EXPECT_EQ(lat.size(), 4u * 8u * 3u);
  EXPECT_EQ(lat.bandwidth(), 12u);
  EXPECT_EQ(lat.stride(1), 12u);
  for (std::size_t i = 0; i < lat.size(); ++i) EXPECT_EQ(lat.index(lat.point(i)), i);
  EXPECT_THROW(lat.index(LatticePoint{{4, 0, 0}}), ValidationError);
  EXPECT_THROW(Lattice(t, 50), ValidationError);
}

TEST(Directions, Encoding) {
  EXPECT_EQ(direction_type(5), 2u);
  EXPECT_TRUE(direction_raises(5));
  EXPECT_FALSE(direction_raises(4));
  EXPECT_EQ(reverse_direction(4), 5u);
  EXPECT_EQ(reverse_direction(5), 4u);
}

TEST(CounterRng, StreamsAreReproducibleAndDistinct) {
  CounterRng a(9, 2), b(9, 2), c(9, 3);
  for (int i = 0; i < 10; ++i) {
    auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
  }
  CounterRng u(1, 0);
  double s = 0.0;
  for (int i = 0; i < 100000; ++i) {
    double x = u.uniform();
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 1.0);
    s += x;
  }
  EXPECT_NEAR(s / 100000, 0.5, 0.005);
}
