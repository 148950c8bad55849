#pragma once

// Reference computations that do not go through the harmonic solver: closed forms for
// birth-death chains and sparse LU solves of the first-passage equations.

#include <Eigen/Sparse>
#include <cmath>
#include <functional>
#include <vector>

#include "hopmeta/chain.hpp"
#include "hopmeta/ldp.hpp"

namespace hopmeta::oracle {

/**
 * Birth-death chain of a single-type model with type value xi and potential v,
 * built from the closed-form weights and rates.
 */
struct BirthDeath {
  long n;
  double beta;
  std::vector<double> log_q;   // unnormalized
  std::vector<double> log_up;  // k -> k+1
  std::vector<double> log_down;

  BirthDeath(long n_, double beta_, double xi, const std::function<double(double)>& v) : n(n_), beta(beta_) {
    const double nd = static_cast<double>(n);
    std::vector<double> vk(static_cast<std::size_t>(n + 1));
    for (long k = 0; k <= n; ++k) vk[static_cast<std::size_t>(k)] = v(xi * (2.0 * static_cast<double>(k) - nd) / nd);
    for (long k = 0; k <= n; ++k) {
      const auto i = static_cast<std::size_t>(k);
      log_q.push_back(std::lgamma(nd + 1) - std::lgamma(k + 1.0) - std::lgamma(nd - k + 1.0) + nd * beta * vk[i]);
      log_up.push_back(k < n ? std::log((nd - k) / nd) - beta * nd * std::max(vk[i] - vk[i + 1], 0.0) : -kInf);
      log_down.push_back(k > 0 ? std::log(k / nd) - beta * nd * std::max(vk[i] - vk[i - 1], 0.0) : -kInf);
    }
    double z = -kInf;
    for (double l : log_q) z = log_add(z, l);
    for (double& l : log_q) l -= z;
  }

  // log resistance of edge (k, k+1)
  double log_r(long k) const { return -(log_q[static_cast<std::size_t>(k)] + log_up[static_cast<std::size_t>(k)]); }

  //! Series-resistance capacity between {a} and {b}, a < b.
  double log_capacity(long a, long b) const {
    double s = -kInf;
    for (long k = a; k < b; ++k) s = log_add(s, log_r(k));
    return -s;
  }

  //! Committor P_k(tau_a < tau_b) for a <= k <= b.
  double phi(long a, long b, long k) const {
    double num = -kInf, den = -kInf;
    for (long j = a; j < b; ++j) {
      den = log_add(den, log_r(j));
      if (j >= k) num = log_add(num, log_r(j));
    }
    return std::exp(num - den);
  }

  //! log E_a[tau_b] for a < b: sum_{j=a}^{b-1} R_j * Q([0, j]).
  double log_mean_hit(long a, long b) const {
    double s = -kInf, mass = -kInf;
    for (long j = 0; j < b; ++j) {
      mass = log_add(mass, log_q[static_cast<std::size_t>(j)]);
      if (j >= a) s = log_add(s, log_r(j) + mass);
    }
    return s;
  }
};

// Dense-index chain description: for each state, its (target, probability) moves.
using Moves = std::function<void(std::size_t, std::vector<std::pair<std::size_t, double>>&)>;

inline Moves moves(const LatticeChain& c) {
  return [&c](std::size_t i, std::vector<std::pair<std::size_t, double>>& out) {
    out.clear();
    for (std::size_t l = 0; l < c.directions(); ++l)
      if (auto j = c.neighbor(i, l)) out.emplace_back(*j, c.rate(i, l));
  };
}

inline Moves moves(const SpinChain& s) {
  return [&s](std::size_t i, std::vector<std::pair<std::size_t, double>>& out) {
    out.clear();
    for (std::size_t b = 0; b < s.sites(); ++b) out.emplace_back(i ^ (std::size_t{1} << b), s.flip_probability(i, b));
  };
}

namespace detail {

// Solves (I - P) h = rhs on the complement of the fixed set, with h given on the fixed set.
inline std::vector<double> solve_off(std::size_t N, const Moves& mv, const std::vector<char>& fixed,
                                     const std::vector<double>& fixed_value, const std::vector<double>& rhs) {
  std::vector<long> idx(N, -1);
  long m = 0;
  for (std::size_t i = 0; i < N; ++i)
    if (!fixed[i]) idx[i] = m++;
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 0; i < N; ++i) {
    if (fixed[i]) continue;
    mv(i, out);
    double leave = 0.0;
    b[idx[i]] = rhs[i];
    for (auto [j, p] : out) {
      leave += p;
      if (fixed[j])
        b[idx[i]] += p * fixed_value[j];
      else
        trip.emplace_back(idx[i], idx[j], -p);
    }
    trip.emplace_back(idx[i], idx[i], leave);
  }
  Eigen::SparseMatrix<double> M(m, m);
  M.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(M);
  Eigen::VectorXd x = lu.solve(b);
  std::vector<double> h(fixed_value);
  for (std::size_t i = 0; i < N; ++i)
    if (!fixed[i]) h[i] = x[idx[i]];
  return h;
}

}  // namespace detail

//! P_x(tau_A < tau_B) by a sparse LU solve.
inline std::vector<double> committor(std::size_t N, const Moves& mv, const std::vector<std::size_t>& A,
                                     const std::vector<std::size_t>& B) {
  std::vector<char> fixed(N, 0);
  std::vector<double> val(N, 0.0);
  for (auto a : A) fixed[a] = 1, val[a] = 1.0;
  for (auto b : B) fixed[b] = 1;
  return detail::solve_off(N, mv, fixed, val, std::vector<double>(N, 0.0));
}

//! E_x[tau_B] for every x by a sparse LU solve.
inline std::vector<double> mean_hitting(std::size_t N, const Moves& mv, const std::vector<std::size_t>& B) {
  std::vector<char> fixed(N, 0);
  for (auto b : B) fixed[b] = 1;
  return detail::solve_off(N, mv, fixed, std::vector<double>(N, 0.0), std::vector<double>(N, 1.0));
}

//! cap(A,B) = sum_{a in A} mu(a) sum_y p(a,y)(1 - h(y)) with h the committor.
inline double capacity(const Moves& mv, const std::function<double(std::size_t)>& mu,
                       const std::vector<std::size_t>& A, const std::vector<double>& h) {
  double c = 0.0;
  std::vector<std::pair<std::size_t, double>> out;
  for (auto a : A) {
    mv(a, out);
    for (auto [y, p] : out) c += mu(a) * p * (1.0 - h[y]);
  }
  return c;
}

}  // namespace hopmeta::oracle
