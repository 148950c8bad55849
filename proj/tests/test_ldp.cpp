#include <gtest/gtest.h>

#include "hopmeta/ldp.hpp"
#include "hopmeta/rng.hpp"

using namespace hopmeta;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }

RateModel fair_cw() { return RateModel(1.0, Potential::hopfield(1), {{-1.0}, {1.0}}, {0.5, 0.5}); }

}  // namespace

TEST(LogMoment, Helpers) {
  EXPECT_NEAR(log_cosh(1.0), 0.4337808304830271, 1e-15);
  EXPECT_NEAR(log_cosh(800.0), 800.0 - std::log(2.0), 1e-12);
  EXPECT_NEAR(log_sum_exp({std::log(2.0), std::log(3.0)}), std::log(5.0), 1e-15);
  EXPECT_EQ(log_sum_exp({-kInf, -kInf}), -kInf);
  EXPECT_NEAR(log_binomial(10, 3), std::log(120.0), 1e-12);
}

TEST(Legendre, BinaryEntropyClosedForm) {
  RateModel rm(0.0, Potential::hopfield(1), {{1.0}}, {1.0}, false);
  EXPECT_NEAR(rm.legendre(v1(0.5)).value, 0.13081203594113697, 1e-12);
  EXPECT_NEAR(rm.legendre(v1(0.3)).value, 0.04570054152531286, 1e-12);
  EXPECT_NEAR(rm.legendre(v1(0.5)).t[0], std::atanh(0.5), 1e-10);
  EXPECT_FALSE(rm.legendre(v1(1.0)).finite);
  EXPECT_FALSE(rm.legendre(v1(-1.2)).finite);
}

TEST(Legendre, FenchelAndResidualOnRandomProbes) {
  RateModel rm(1.0, Potential::hopfield(2), {{-1.0, -1.0}, {-1.0, 1.0}, {1.0, -0.5}, {1.0, 1.0}}, {0.2, 0.3, 0.1, 0.4}, false);
  CounterRng rng(3, 0);
  int tested = 0;
  for (int i = 0; i < 500; ++i) {
    Vec x(2), t(2);
    x << 2 * rng.uniform() - 1, 2 * rng.uniform() - 1;
    t << 6 * rng.uniform() - 3, 6 * rng.uniform() - 3;
    auto lg = rm.legendre(x);
    if (!lg.finite) {
      EXPECT_LT(rm.margin(x), RateModel::kFeasibilityMargin);
      continue;
    }
    ++tested;
    EXPECT_LE((rm.log_moment(lg.t).gradient - x).norm(), 1e-9);
    EXPECT_GE(lg.value + rm.log_moment(t).value - t.dot(x), -1e-10);
  }
  EXPECT_GT(tested, 100);
}

TEST(Legendre, ZonotopeDomain) {
  // generators (1,1) and (1,-1) with weight 1/2: the domain is the diamond |x1|+|x2| <= 1
  RateModel rm(0.0, Potential::hopfield(2), {{1.0, 1.0}, {1.0, -1.0}}, {0.5, 0.5}, false);
  Vec in(2), out(2);
  in << 0.45, 0.45;
  out << 0.55, 0.5;
  EXPECT_TRUE(rm.legendre(in).finite);
  EXPECT_FALSE(rm.legendre(out).finite);
  EXPECT_NEAR(rm.margin(in), 0.1 / std::sqrt(2.0), 1e-12);
}

TEST(RateModel, CurieWeissMinimaAndNormalization) {
  RateModel rm = fair_cw();
  const double m = 0.9575040240772688;
  EXPECT_NEAR(rm.rate(v1(m)).gradient[0], 0.0, 1e-9);
  EXPECT_NEAR(rm.rate(v1(m)).value, 0.0, 1e-10);
  EXPECT_NEAR(rm.rate(v1(-m)).value, 0.0, 1e-10);
  EXPECT_GT(rm.rate(v1(0.0)).value, 0.0);
  // I(0) - I(m*) = L*(m*) - m*^2 with L* the binary entropy, sign flipped
  const double Lm = 0.5 * ((1 + m) * std::log(1 + m) + (1 - m) * std::log(1 - m));
  EXPECT_NEAR(rm.rate(v1(0.0)).value, m * m - Lm, 1e-9);
  EXPECT_NEAR(rm.rate(v1(0.0)).hessian(0, 0), -2.0 + 1.0, 1e-9);
}

TEST(RateModel, RejectsBadInput) {
  EXPECT_THROW(RateModel(-1.0, Potential::hopfield(1), {{1.0}}, {1.0}), ValidationError);
  EXPECT_THROW(RateModel(1.0, Potential::hopfield(1), {{1.0}}, {0.9}), ValidationError);
  EXPECT_THROW(RateModel(1.0, Potential::hopfield(2), {{1.0}}, {1.0}), ValidationError);
}

TEST(LumpedMeasure, NormalizedAndMatchesContinuousExtension) {
  TypeTable t({{-1.0}, {1.0}}, {9, 11});
  LumpedMeasure m(t, 1.0, Potential::hopfield(1));
  std::vector<double> lq;
  for (std::size_t i = 0; i < m.lattice().size(); ++i) lq.push_back(m.log_q(i));
  EXPECT_NEAR(log_sum_exp(lq), 0.0, 1e-13);
  for (std::size_t i = 0; i < m.lattice().size(); i += 7)
    EXPECT_NEAR(m.log_q_continuous(plus_counts_vec(m.lattice().point(i))), m.log_q(i), 1e-10);
}

TEST(RateHat, ExactHessianMatchesFiniteDifferences) {
  TypeTable t({{-1.0, 1.0}, {1.0, 0.5}}, {30, 50});
  RateModel rm = RateModel::quenched(1.2, Potential::hopfield(2), t);
  LumpedMeasure m(t, 1.2, Potential::hopfield(2));
  Vec k(2);
  k << 11.3, 31.7;
  RateHat r = rate_hat_and_hessian(k, rm, m, HessianMode::exact);
  const double n = 80.0, h = 1e-3;
  // a step of h in k_a moves Y by h times a column of the plane map
  for (int a = 0; a < 2; ++a) {
    Vec e = Vec::Zero(2);
    e[a] = h;
    const double d2 = (-m.log_q_continuous(k + e) + 2 * m.log_q_continuous(k) - m.log_q_continuous(k - e)) / (n * h * h);
    const Vec dy = y_coordinates(k + e, t) - y_coordinates(k, t);
    EXPECT_NEAR(d2 * h * h, dy.dot(r.hessian * dy), 1e-6 * std::abs(d2 * h * h) + 1e-12);
  }
  EXPECT_THROW(rate_hat_and_hessian(Vec::Constant(2, -1.0), rm, m, HessianMode::exact), ValidationError);
}

TEST(RateHat, FiberFlatHessianIsPulledBackRateHessian) {
  TypeTable t({{-1.0}, {1.0}}, {45, 55});
  RateModel rm = RateModel::quenched(1.0, Potential::hopfield(1), t);
  LumpedMeasure m(t, 1.0, Potential::hopfield(1));
  Vec k(2);
  k << 10.0, 40.0;
  RateHat r = rate_hat_and_hessian(k, rm, m, HessianMode::paper);
  const Mat J = projection_matrix(t);
  const Vec x = m.project_continuous(k);
  EXPECT_NEAR((r.hessian - J.transpose() * rm.rate(x).hessian * J).norm(), 0.0, 1e-12);
  EXPECT_NEAR(r.value, rm.rate(x).value, 1e-14);
}
