#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "hopmeta/disorder.hpp"
#include "hopmeta/errors.hpp"
#include "hopmeta/model.hpp"

namespace hopmeta {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

//! log cosh u without overflow.
inline double log_cosh(double u) {
  double a = std::abs(u);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

inline double log_sum_exp(const std::vector<double>& xs) {
  double m = -kInf;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -kInf) return a;
  return a + std::log1p(std::exp(b - a));
}

inline double log_binomial(long n, long k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

struct LogMoment {
  double value = 0.0;
  Vec gradient;
  Mat hessian;
};

struct LegendreResult {
  bool finite = false;
  bool converged = false;
  double value = kInf;
  Vec t;
  double residual = kInf;
  int iterations = 0;
};

struct RateValue {
  bool finite = false;
  double value = kInf;
  Vec gradient;
  Mat hessian;
  Vec t;  // maximizer of the Legendre transform
};

enum class HessianMode { paper, exact };

/**
 * @brief beta, v and the type law q; evaluates L, L*, and I = -beta v + L* + c.
 *
 * c is fixed so that min I = 0 over the feasible domain. The domain of L* is the
 * zonotope sum_a q_a [-a, a].
 */
class RateModel {
 public:
  RateModel(double beta, Potential v, const std::vector<std::vector<double>>& types, std::vector<double> q,
            bool normalize = true)
      : beta_(beta), v_(std::move(v)), q_(std::move(q)) {
    if (!(beta_ >= 0.0) || !std::isfinite(beta_)) throw ValidationError("rate model: beta must be finite and >= 0");
    if (types.empty() || types.size() != q_.size()) throw ValidationError("rate model: types and q differ in length");
    const auto p = static_cast<Eigen::Index>(v_.dim());
    if (static_cast<Eigen::Index>(types.front().size()) != p)
      throw ValidationError("rate model: type dimension differs from potential dimension");
    double total = 0.0;
    for (double x : q_) {
      if (!(x >= 0.0)) throw ValidationError("rate model: negative type probability");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ValidationError("rate model: type probabilities must sum to 1");
    types_.resize(p, static_cast<Eigen::Index>(types.size()));
    for (std::size_t a = 0; a < types.size(); ++a)
      for (Eigen::Index j = 0; j < p; ++j) types_(j, static_cast<Eigen::Index>(a)) = types[a][static_cast<std::size_t>(j)];
    build_facets();
    if (normalize) c_ = -minimize_unnormalized();
  }

  static RateModel quenched(double beta, Potential v, const TypeTable& table, bool normalize = true) {
    return {beta, std::move(v), table.types(), table.frequencies(), normalize};
  }

  double beta() const { return beta_; }
  const Potential& potential() const { return v_; }
  std::size_t dim() const { return v_.dim(); }
  const Mat& types() const { return types_; }
  const std::vector<double>& q() const { return q_; }
  double c() const { return c_; }

  LogMoment log_moment(const Vec& t) const {
    const auto p = static_cast<Eigen::Index>(dim());
    LogMoment r{0.0, Vec::Zero(p), Mat::Zero(p, p)};
    for (Eigen::Index a = 0; a < types_.cols(); ++a) {
      const double q = q_[static_cast<std::size_t>(a)];
      if (q == 0.0) continue;
      const double u = t.dot(types_.col(a));
      const double th = std::tanh(u);
      r.value += q * log_cosh(u);
      r.gradient += q * th * types_.col(a);
      r.hessian += q * (1.0 - th * th) * types_.col(a) * types_.col(a).transpose();
    }
    return r;
  }

  //! Distance-like margin of x to the boundary of the feasible zonotope (negative outside).
  double margin(const Vec& x) const {
    double m = kInf;
    for (Eigen::Index f = 0; f < normals_.cols(); ++f)
      m = std::min(m, support_[static_cast<std::size_t>(f)] - normals_.col(f).dot(x));
    return m;
  }

  bool feasible(const Vec& x, double margin_min = kFeasibilityMargin) const { return margin(x) >= margin_min; }

  //! Half-widths of the axis-aligned box containing the zonotope.
  Vec box() const {
    Vec b = Vec::Zero(static_cast<Eigen::Index>(dim()));
    for (Eigen::Index a = 0; a < types_.cols(); ++a) b += q_[static_cast<std::size_t>(a)] * types_.col(a).cwiseAbs();
    return b;
  }

  LegendreResult legendre(const Vec& x) const {
    LegendreResult r;
    const auto p = static_cast<Eigen::Index>(dim());
    r.t = Vec::Zero(p);
    if (x.size() != p) throw ValidationError("legendre: argument has wrong dimension");
    if (!feasible(x)) return r;
    auto dual = [&](const Vec& t, double lt) { return t.dot(x) - lt; };
    LogMoment lm = log_moment(r.t);
    for (r.iterations = 0; r.iterations < kNewtonMaxIter; ++r.iterations) {
      Vec res = x - lm.gradient;
      r.residual = res.norm();
      if (r.residual <= kNewtonTol) {
        r.converged = true;
        break;
      }
      Vec step = lm.hessian.ldlt().solve(res);
      const double current = dual(r.t, lm.value);
      double alpha = 1.0;
      bool improved = false;
      for (int h = 0; h < 60; ++h, alpha *= 0.5) {
        Vec trial = r.t + alpha * step;
        LogMoment tl = log_moment(trial);
        if (std::isfinite(tl.value) &&
            (dual(trial, tl.value) >= current || (x - tl.gradient).norm() < r.residual)) {
          r.t = trial;
          lm = std::move(tl);
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    r.residual = (x - lm.gradient).norm();
    if (!r.converged && r.residual <= 1e-9) r.converged = true;
    if (!r.converged) return r;
    r.finite = true;
    r.value = dual(r.t, lm.value);
    return r;
  }

  //! -beta v + L*, i.e. I without the normalization constant.
  RateValue rate_unnormalized(const Vec& x) const {
    RateValue r;
    LegendreResult lg = legendre(x);
    r.t = lg.t;
    if (!lg.finite) return r;
    r.finite = true;
    r.value = -beta_ * v_.value(x) + lg.value;
    r.gradient = -beta_ * v_.gradient(x) + lg.t;
    Mat hl = log_moment(lg.t).hessian;
    r.hessian = -beta_ * v_.hessian(x) + hl.inverse();
    return r;
  }

  RateValue rate(const Vec& x) const {
    RateValue r = rate_unnormalized(x);
    if (r.finite) r.value += c_;
    return r;
  }

  double rate_value(const Vec& x) const { return rate(x).value; }

  static constexpr double kFeasibilityMargin = 1e-9;
  static constexpr int kNewtonMaxIter = 100;
  static constexpr double kNewtonTol = 1e-11;

 private:
  void build_facets() {
    const auto p = types_.rows();
    Mat gens(p, 0);
    for (Eigen::Index a = 0; a < types_.cols(); ++a) {
      const double q = q_[static_cast<std::size_t>(a)];
      if (q > 0.0 && types_.col(a).norm() > 0.0) {
        gens.conservativeResize(p, gens.cols() + 1);
        gens.col(gens.cols() - 1) = q * types_.col(a);
      }
    }
    Eigen::FullPivLU<Mat> lu(gens);
    if (gens.cols() == 0 || lu.rank() < p) throw ValidationError("rate model: feasible domain is degenerate");
    std::vector<Vec> normals;
    if (p == 1) {
      normals.push_back(Vec::Ones(1));
    } else {
      // facet normals are orthogonal to p-1 linearly independent generators
      std::vector<int> pick(static_cast<std::size_t>(p - 1));
      std::iota(pick.begin(), pick.end(), 0);
      const int m = static_cast<int>(gens.cols());
      while (true) {
        Mat sub(p, p - 1);
        for (Eigen::Index j = 0; j < p - 1; ++j) sub.col(j) = gens.col(pick[static_cast<std::size_t>(j)]);
        Eigen::FullPivLU<Mat> slu(sub.transpose());
        if (slu.rank() == p - 1) {
          Vec u = slu.kernel().col(0);
          normals.push_back(u / u.norm());
        }
        int k = static_cast<int>(p) - 2;
        while (k >= 0 && pick[static_cast<std::size_t>(k)] == m - (static_cast<int>(p) - 1) + k) --k;
        if (k < 0) break;
        ++pick[static_cast<std::size_t>(k)];
        for (int j = k + 1; j < static_cast<int>(p) - 1; ++j)
          pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
      }
    }
    normals_.resize(p, static_cast<Eigen::Index>(2 * normals.size()));
    support_.clear();
    for (std::size_t f = 0; f < normals.size(); ++f)
      for (int sign : {1, -1}) {
        Vec u = sign * normals[f];
        normals_.col(static_cast<Eigen::Index>(support_.size())) = u;
        support_.push_back((gens.transpose() * u).cwiseAbs().sum());
      }
  }

  // global minimum of -beta v + L* by multistart modified Newton
  double minimize_unnormalized() const {
    const auto p = static_cast<Eigen::Index>(dim());
    const Vec half = box();
    const int per_dim = p == 1 ? 9 : (p == 2 ? 7 : 5);
    double best = kInf;
    std::vector<int> idx(static_cast<std::size_t>(p), 0);
    while (true) {
      Vec x(p);
      for (Eigen::Index j = 0; j < p; ++j)
        x[j] = half[j] * (-1.0 + (2.0 * idx[static_cast<std::size_t>(j)] + 1.0) / per_dim) * 0.98;
      if (feasible(x, 1e-6)) best = std::min(best, descend(x));
      Eigen::Index j = 0;
      while (j < p && ++idx[static_cast<std::size_t>(j)] == per_dim) idx[static_cast<std::size_t>(j++)] = 0;
      if (j == p) break;
    }
    if (!std::isfinite(best)) throw NumericalError("rate model: could not locate the minimum of the rate function");
    return best;
  }

  double descend(Vec x) const {
    RateValue f = rate_unnormalized(x);
    if (!f.finite) return kInf;
    for (int it = 0; it < 200 && f.gradient.norm() > 1e-11; ++it) {
      Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (f.hessian + f.hessian.transpose()));
      Vec ev = es.eigenvalues().cwiseAbs().cwiseMax(1e-8);
      Vec step = -(es.eigenvectors() * (es.eigenvectors().transpose() * f.gradient).cwiseQuotient(ev));
      double alpha = 1.0;
      bool moved = false;
      for (int h = 0; h < 60; ++h, alpha *= 0.5) {
        Vec trial = x + alpha * step;
        if (!feasible(trial, 1e-12)) continue;
        RateValue ft = rate_unnormalized(trial);
        if (ft.finite && ft.value < f.value) {
          x = trial;
          f = std::move(ft);
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    return f.value;
  }

  double beta_;
  Potential v_;
  std::vector<double> q_;
  Mat types_;
  Mat normals_;
  std::vector<double> support_;
  double c_ = 0.0;
};

/**
 * @brief The lumped Gibbs measure on the lattice, in log space.
 *
 * log_weight(Y) = n beta v(X) + sum_a log C(n_a, k_a); normalized values subtract log Z.
 */
class LumpedMeasure {
 public:
  LumpedMeasure(TypeTable table, double beta, Potential v, double state_budget = 5e6)
      : table_(std::move(table)), beta_(beta), v_(std::move(v)), lattice_(table_, state_budget) {
    if (v_.dim() != table_.dim()) throw ValidationError("lumped measure: potential and type dimensions differ");
    const std::size_t N = lattice_.size();
    v_values_.resize(N);
    log_weights_.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      LatticePoint y = lattice_.point(i);
      v_values_[i] = v_.value(project(y, table_));
      log_weights_[i] = unnormalized(y, v_values_[i]);
    }
    log_z_ = log_sum_exp(log_weights_);
  }

  const TypeTable& table() const { return table_; }
  double beta() const { return beta_; }
  const Potential& potential() const { return v_; }
  const Lattice& lattice() const { return lattice_; }
  long n() const { return table_.n(); }
  double log_z() const { return log_z_; }
  //! v(X) per state, from integer counts.
  const std::vector<double>& v_values() const { return v_values_; }
  //! Unnormalized log weights per state.
  const std::vector<double>& log_weights() const { return log_weights_; }

  double lumped_log_weight(const LatticePoint& y) const { return unnormalized(y, v_.value(project(y, table_))); }
  double log_q(std::size_t i) const { return log_weights_[i] - log_z_; }
  double log_q(const LatticePoint& y) const { return lumped_log_weight(y) - log_z_; }

  //! Continuous extension of log Q_n in the plus counts k (lgamma-based), normalized.
  double log_q_continuous(const Vec& k) const {
    double s = static_cast<double>(n()) * beta_ * v_.value(project_continuous(k));
    for (std::size_t a = 0; a < table_.size(); ++a) {
      const double na = static_cast<double>(table_.count(a)), ka = k[static_cast<Eigen::Index>(a)];
      s += std::lgamma(na + 1.0) - std::lgamma(ka + 1.0) - std::lgamma(na - ka + 1.0);
    }
    return s - log_z_;
  }

  Vec project_continuous(const Vec& k) const {
    Vec x = Vec::Zero(static_cast<Eigen::Index>(table_.dim()));
    for (std::size_t a = 0; a < table_.size(); ++a)
      for (std::size_t j = 0; j < table_.dim(); ++j)
        x[static_cast<Eigen::Index>(j)] +=
            table_.type(a)[j] * (2.0 * k[static_cast<Eigen::Index>(a)] - static_cast<double>(table_.count(a)));
    return x / static_cast<double>(n());
  }

 private:
  double unnormalized(const LatticePoint& y, double v) const {
    double s = static_cast<double>(n()) * beta_ * v;
    for (std::size_t a = 0; a < table_.size(); ++a) s += log_binomial(table_.count(a), y.plus_counts[a]);
    return s;
  }

  TypeTable table_;
  double beta_;
  Potential v_;
  Lattice lattice_;
  std::vector<double> v_values_, log_weights_;
  double log_z_ = 0.0;
};

//! Y-space coordinates: index 2a is Y_a^+, index 2a+1 is Y_a^-.
inline Vec y_coordinates(const Vec& k, const TypeTable& table) {
  const auto A = static_cast<Eigen::Index>(table.size());
  Vec y(2 * A);
  const double n = static_cast<double>(table.n());
  for (Eigen::Index a = 0; a < A; ++a) {
    y[2 * a] = k[a] / n;
    y[2 * a + 1] = (static_cast<double>(table.count(static_cast<std::size_t>(a))) - k[a]) / n;
  }
  return y;
}

inline Vec plus_counts_vec(const LatticePoint& y) {
  Vec k(static_cast<Eigen::Index>(y.plus_counts.size()));
  for (std::size_t a = 0; a < y.plus_counts.size(); ++a) k[static_cast<Eigen::Index>(a)] = static_cast<double>(y.plus_counts[a]);
  return k;
}

//! The linear map Y -> X: column 2a is a, column 2a+1 is -a.
inline Mat projection_matrix(const TypeTable& table) {
  const auto A = static_cast<Eigen::Index>(table.size());
  const auto p = static_cast<Eigen::Index>(table.dim());
  Mat J(p, 2 * A);
  for (Eigen::Index a = 0; a < A; ++a)
    for (Eigen::Index j = 0; j < p; ++j) {
      J(j, 2 * a) = table.type(static_cast<std::size_t>(a))[static_cast<std::size_t>(j)];
      J(j, 2 * a + 1) = -J(j, 2 * a);
    }
  return J;
}

//! Columns (e_{a+} - e_{a-}) / n: Y-space displacement per unit change of k_a.
inline Mat plane_map(const TypeTable& table) {
  const auto A = static_cast<Eigen::Index>(table.size());
  Mat T = Mat::Zero(2 * A, A);
  const double n = static_cast<double>(table.n());
  for (Eigen::Index a = 0; a < A; ++a) {
    T(2 * a, a) = 1.0 / n;
    T(2 * a + 1, a) = -1.0 / n;
  }
  return T;
}

struct RateHat {
  double value = kInf;
  Vec gradient;
  Mat hessian;
};

/**
 * @brief Lifted rate at continuous plus counts k, with gradient and Hessian in Y-space.
 *
 * paper: I o pi_2. exact: -(1/n) log Q_n continued through lgamma, which adds the
 * binomial entropy curvature along the fibers.
 */
inline RateHat rate_hat_and_hessian(const Vec& k, const RateModel& rm, const LumpedMeasure& measure, HessianMode mode) {
  const TypeTable& table = measure.table();
  const double n = static_cast<double>(table.n());
  RateHat r;
  if (mode == HessianMode::paper) {
    const Mat J = projection_matrix(table);
    RateValue iv = rm.rate(measure.project_continuous(k));
    if (!iv.finite) throw AssumptionFailure("rate_hat: projection on the boundary of the feasible domain");
    r.value = iv.value;
    r.gradient = J.transpose() * iv.gradient;
    r.hessian = J.transpose() * iv.hessian * J;
    return r;
  }
  const auto A = static_cast<Eigen::Index>(table.size());
  for (Eigen::Index a = 0; a < A; ++a)
    if (!(k[a] >= 0.0 && k[a] <= static_cast<double>(table.count(static_cast<std::size_t>(a)))))
      throw ValidationError("rate_hat: exact mode needs plus counts within [0, n_a]");
  const Vec x = measure.project_continuous(k);
  const Mat J = projection_matrix(table);
  const Vec gv = measure.potential().gradient(x);
  const Mat hv = measure.potential().hessian(x);
  const double beta = measure.beta();
  Vec gk(A);
  Mat Gk(A, A);
  for (Eigen::Index a = 0; a < A; ++a) {
    const double na = static_cast<double>(table.count(static_cast<std::size_t>(a)));
    const Vec ta = J.col(2 * a);
    gk[a] = -beta * (2.0 / n) * gv.dot(ta) +
            (boost::math::digamma(k[a] + 1.0) - boost::math::digamma(na - k[a] + 1.0)) / n;
    for (Eigen::Index b = 0; b < A; ++b) Gk(a, b) = -beta * (4.0 / (n * n)) * ta.dot(hv * J.col(2 * b));
    Gk(a, a) += (boost::math::trigamma(k[a] + 1.0) + boost::math::trigamma(na - k[a] + 1.0)) / n;
  }
  const Mat T = plane_map(table);
  const double s = n * n / 2.0;
  r.value = -measure.log_q_continuous(k) / n;
  r.gradient = s * T * gk;
  r.hessian = s * s * T * Gk * T.transpose();
  return r;
}

//! log kappa_n(Y) = log Q_n(Y) + n I(pi_2 Y).
inline double log_kappa_hat(const LatticePoint& y, const RateModel& rm, const LumpedMeasure& measure) {
  RateValue iv = rm.rate(project(y, measure.table()));
  if (!iv.finite) throw AssumptionFailure("kappa_hat: projection on the boundary of the feasible domain");
  return measure.log_q(y) + static_cast<double>(measure.n()) * iv.value;
}

}  // namespace hopmeta
