#include <gtest/gtest.h>

#include <cmath>

#include "hopmeta/asymptotics.hpp"

using namespace hopmeta;

namespace {

constexpr double kMStar = 0.9575040240772688;  // m = tanh(2m)

// Curie-Weiss rate function at beta = 1 from the binary entropy.
double cw_rate(double x) {
  const double ls = 0.5 * (1 + x) * std::log1p(x) + 0.5 * (1 - x) * std::log1p(-x);
  return -x * x + ls;
}

struct Benchmark {
  long n;
  TypeTable table;
  LatticeChain chain;
  RateModel rm;
  GateSet gate;
  LatticePoint m;
  std::vector<std::size_t> A, B;

  explicit Benchmark(long n_)
      : n(n_),
        table({{-1.0}, {1.0}}, {n_ - std::lround(0.55 * n_), std::lround(0.55 * n_)}),
        chain(table, 1.0, Potential::hopfield(1)),
        rm(RateModel::quenched(1.0, Potential::hopfield(1), table)) {
    auto cps = find_critical_points(rm);
    gate = find_gate(cps, rm, default_start_minimum(cps));
    m = lattice_representative(gate.m.x, chain.measure());
    for (const auto& y : lattice_fiber(m, chain.measure())) A.push_back(chain.lattice().index(y));
    for (const auto& M : gate.M)
      for (const auto& y : lattice_fiber(lattice_representative(M.x, chain.measure()), chain.measure()))
        B.push_back(chain.lattice().index(y));
  }

  std::vector<SaddleData> saddles(HessianMode mode) const {
    const Vec toward = y_coordinates(plus_counts_vec(m), table);
    std::vector<SaddleData> out;
    for (const auto& z : gate.Z)
      out.push_back(saddle_eigendata(lattice_representative(z.x, chain.measure()), chain, rm, mode, toward));
    return out;
  }
};

}  // namespace

TEST(CriticalPoints, CurieWeissMinimaAndSaddle) {
  TypeTable t({{1.0}}, {100});
  const auto rm = RateModel::quenched(1.0, Potential::hopfield(1), t);
  const auto cps = find_critical_points(rm);
  ASSERT_EQ(cps.size(), 3u);
  std::vector<double> mins;
  for (const auto& p : cps) {
    if (p.kind == PointKind::minimum) {
      mins.push_back(p.x[0]);
      EXPECT_NEAR(std::abs(p.x[0]), kMStar, 1e-9);
      EXPECT_NEAR(p.value, 0.0, 1e-10);
    } else {
      EXPECT_EQ(p.kind, PointKind::saddle);
      EXPECT_NEAR(p.x[0], 0.0, 1e-10);
      EXPECT_NEAR(p.value, cw_rate(0.0) - cw_rate(kMStar), 1e-10);
    }
  }
  EXPECT_EQ(mins.size(), 2u);
}

TEST(Gate, SymmetricTieAdmitsTheMirrorMinimum) {
  Benchmark b(100);
  EXPECT_NEAR(b.gate.m.x[0], -kMStar, 1e-9);
  ASSERT_EQ(b.gate.M.size(), 1u);
  EXPECT_NEAR(b.gate.M[0].x[0], kMStar, 1e-9);
  ASSERT_EQ(b.gate.Z.size(), 1u);
  EXPECT_NEAR(b.gate.Z[0].x[0], 0.0, 1e-9);
  EXPECT_NEAR(b.gate.gate_value - b.gate.m.value, -cw_rate(kMStar), 1e-9);
  EXPECT_NEAR(b.gate.grid_gate_value, b.gate.gate_value, 1e-3);
}

TEST(Gate, LatticeFiberSharesTheProjection) {
  Benchmark b(50);
  const Vec x = project(b.m, b.table);
  ASSERT_FALSE(b.A.empty());
  for (auto i : b.A) EXPECT_NEAR((project(b.chain.lattice().point(i), b.table) - x).norm(), 0.0, 1e-12);
}

TEST(Eigen, CanonicalBasisSplitsPlaneAndNormal) {
  TypeTable t({{-1.0}, {1.0}}, {10, 12});
  const Mat T = plane_map(t);
  Mat K(2, 2);
  K << 3.0, 1.0, 1.0, -2.0;
  const Mat H = T * K * T.transpose() * 1e4 + Mat::Identity(4, 4);
  const EigenData e = canonical_eigen(H, 2);
  EXPECT_EQ(e.in_plane, 2u);
  EXPECT_NEAR((e.V.transpose() * e.V - Mat::Identity(4, 4)).norm(), 0.0, 1e-12);
  for (Eigen::Index i = 0; i < 2; ++i) {
    // in-plane eigenvectors are orthogonal to the normals (1,1,0,0), (0,0,1,1)
    EXPECT_NEAR(e.V(0, i) + e.V(1, i), 0.0, 1e-12);
    EXPECT_NEAR(e.V(2, i) + e.V(3, i), 0.0, 1e-12);
    const Vec v = e.V.col(i);
    const Vec hv = H * v;
    const Vec inplane = hv - (hv.dot(e.V.col(2)) * e.V.col(2) + hv.dot(e.V.col(3)) * e.V.col(3));
    EXPECT_NEAR((inplane - e.gamma[i] * v).norm(), 0.0, 1e-9 * std::abs(e.gamma[i]));
  }
  EXPECT_LT(e.gamma[0], e.gamma[1]);
  EXPECT_EQ(e.gamma[2], 0.0);
  EXPECT_EQ(e.gamma[3], 0.0);
}

TEST(Dice, OneTypeCountIsAnInterval) {
  const long n = 100;
  TypeTable t({{1.0}}, {n});
  EigenData e = canonical_eigen(Mat::Identity(2, 2), 1);
  const double h = 1.0 / std::sqrt(static_cast<double>(n));
  // |<dk T, v>| = sqrt(2)|dk|/n <= h  <=>  |dk| <= 7
  EXPECT_EQ(count_dice(LatticePoint{{50}}, e, t, h), 15u);
  EXPECT_EQ(count_dice(LatticePoint{{3}}, e, t, h), 11u);
  EXPECT_EQ(count_dice(LatticePoint{{3}}, e, t, h, false), 15u);
}

TEST(GFunction, ReflectionSymmetryAndLimits) {
  Vec z(2), w(2), y(2);
  z << 0.2, -0.1;
  w << 0.6, 0.8;
  y << 0.25, -0.3;
  const long n = 200;
  const double lambda = -1.7;
  EXPECT_NEAR(g_function(y, z, lambda, w, n) + g_function(2 * z - y, z, lambda, w, n), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(g_function(z, z, lambda, w, n), 0.5);
  EXPECT_GT(g_function(z + w, z, lambda, w, n), 1.0 - 1e-12);
}

TEST(Capacity, UpperBoundDominatesExactCapacity) {
  for (long n : {50L, 100L, 200L}) {
    Benchmark b(n);
    auto g = conductance_graph(b.chain);
    const double exact = solve_harmonic(g, b.A, b.B).log_capacity;
    for (auto mode : {HessianMode::exact, HessianMode::paper}) {
      const auto s = b.saddles(mode);
      EXPECT_GE(capacity_upper_bound(s, n), exact) << n << to_string(mode);
    }
  }
}

TEST(Capacity, BenchmarkRatiosAtTwoHundred) {
  // frozen from the banded solve; the exact capacity itself is oracle-checked in the solver tests
  Benchmark b(200);
  auto g = conductance_graph(b.chain);
  const auto rep = capacity_report(g, b.A, b.B);
  EXPECT_NEAR(rep.log_capacity, -72.645341123662931, 1e-9);
  const auto s = b.saddles(HessianMode::exact);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(std::exp(rep.log_capacity - capacity_asymptotic(s, 200, {StepNorm::step, GateDirection::w})), 0.900844564851,
              1e-8);
  EXPECT_NEAR(std::exp(rep.log_capacity - capacity_asymptotic(s, 200, {StepNorm::unit, GateDirection::w})),
              4.50422282425e-05, 1e-14);
  const auto md = minimum_data(b.m, b.chain, b.rm, HessianMode::exact);
  const auto pf = prefactor_cn(md, s, 200, b.gate.gate_value - b.gate.m.value);
  EXPECT_NEAR(std::exp(pf.log_prediction - rep.hitting.log_mean), 1.03358059265, 1e-8);
  EXPECT_GE(md.dice_unclipped, md.dice);
}

TEST(Capacity, BoundaryCountsAreExactModeAdmissible) {
  Benchmark b(50);
  const auto md = minimum_data(b.m, b.chain, b.rm, HessianMode::exact);
  EXPECT_TRUE(md.eig.gamma.allFinite());
  EXPECT_GT(md.eig.gamma[0], 0.0);
}

TEST(MaxPrinciple, HarmonicOnAPathHoldsWithZeroDefect) {
  const std::size_t N = 9;
  WeightedGraph g;
  for (std::size_t i = 0; i < N; ++i) {
    if (i > 0) {
      g.targets.push_back(i - 1);
      g.weights.push_back(2.0);
    }
    if (i + 1 < N) {
      g.targets.push_back(i + 1);
      g.weights.push_back(2.0);
    }
    g.offsets.push_back(g.targets.size());
  }
  std::vector<double> F(N);
  for (std::size_t i = 0; i < N; ++i) F[i] = -0.3 + 0.1 * static_cast<double>(i);
  std::vector<char> b0(N, 0);
  b0.front() = b0.back() = 1;
  const auto v = max_principle_check(F, g, b0);
  EXPECT_NEAR(v.delta, 0.0, 1e-15);
  EXPECT_NEAR(v.epsilon, 0.5, 1e-15);
  EXPECT_EQ(v.C, 8.0);
  EXPECT_EQ(v.theta, 2.0);
  EXPECT_TRUE(v.holds);

  F[4] += 1.0;  // a bump of size 1 costs delta = 4
  MaxPrincipleParams p;
  p.C = 0.01;
  const auto w = max_principle_check(F, g, b0, p);
  EXPECT_NEAR(w.delta, 4.0, 1e-12);
  EXPECT_NEAR(w.bound, 0.5 + 0.01 * 4.0 / 2.0, 1e-12);
  EXPECT_FALSE(w.holds);

  std::vector<char> none(N, 0);
  EXPECT_THROW(max_principle_check(F, g, none), ValidationError);
}

TEST(HarmonicDiagnostic, LocalCommittorIsWithinOneOverN) {
  Benchmark b(100);
  auto g = conductance_graph(b.chain);
  const auto h = solve_harmonic(g, b.A, b.B);
  const auto s = b.saddles(HessianMode::exact);
  const auto d = harmonic_diagnostic(s.front(), b.chain, 0.25, &h);
  EXPECT_GT(d.points, d.inner_points);
  EXPECT_LT(100.0 * d.max_diff, 0.1);
  EXPECT_TRUE(d.check.holds);
  EXPECT_TRUE(std::isfinite(d.max_diff_global));
}
