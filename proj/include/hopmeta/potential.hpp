#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "hopmeta/chain.hpp"
#include "hopmeta/errors.hpp"
#include "hopmeta/ldp.hpp"

namespace hopmeta {

/**
 * @brief A reversible network in log space: normalized log weights per node and
 * symmetric log conductances log(Q(i) r(i,j)) per undirected edge, stored in CSR
 * with both directions.
 */
struct ConductanceGraph {
  std::vector<double> log_weight;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> targets;
  std::vector<double> log_c;

  std::size_t size() const { return log_weight.size(); }
};

inline ConductanceGraph conductance_graph(const LatticeChain& chain) {
  ConductanceGraph g;
  const LumpedMeasure& m = chain.measure();
  g.log_weight.resize(chain.size());
  for (std::size_t i = 0; i < chain.size(); ++i) {
    g.log_weight[i] = m.log_q(i);
    for (std::size_t l = 0; l < chain.directions(); ++l) {
      auto j = chain.neighbor(i, l);
      if (!j) continue;
      // use the lower endpoint's side so both directions carry the same number
      const double lc = *j > i ? m.log_q(i) + chain.log_rate(i, l)
                               : m.log_q(*j) + chain.log_rate(*j, reverse_direction(l));
      if (lc == -kInf) continue;
      g.targets.push_back(*j);
      g.log_c.push_back(lc);
    }
    g.offsets.push_back(g.targets.size());
  }
  return g;
}

inline ConductanceGraph conductance_graph(const SpinChain& spins) {
  ConductanceGraph g;
  g.log_weight.resize(spins.size());
  for (std::size_t s = 0; s < spins.size(); ++s) {
    g.log_weight[s] = spins.log_mu(s);
    for (std::size_t i = 0; i < spins.sites(); ++i) {
      const std::size_t t = s ^ (std::size_t{1} << i);
      const std::size_t lo = std::min(s, t);
      g.targets.push_back(t);
      g.log_c.push_back(spins.log_mu(lo) + spins.log_flip_probability(lo, i));
    }
    g.offsets.push_back(g.targets.size());
  }
  return g;
}

struct SolverOptions {
  bool prune = true;
  double prune_log10 = 300.0;
  double cg_tolerance = 1e-12;
  double band_work_budget = 4e10;    // flops of the banded elimination
  double band_memory_budget = 3e8;   // stored band entries
  bool force_cg = false;
};

struct SolverStats {
  std::string method;
  std::size_t iterations = 0;
  double residual = 0.0;
  std::size_t active = 0;
  std::size_t pruned = 0;
  std::size_t disconnected = 0;
  std::size_t bandwidth = 0;
  double seconds = 0.0;
  bool cache_hit = false;
};

/**
 * @brief Equilibrium potential of (A, B): phi = P(tau_A < tau_B), psi = 1 - phi,
 * both stored separately so that values near 0 and near 1 keep relative accuracy.
 */
struct HarmonicSolution {
  std::vector<double> phi, psi;
  double log_capacity = -kInf;
  SolverStats stats;
};

namespace detail {

inline void validate_sets(std::size_t N, const std::vector<std::size_t>& A, const std::vector<std::size_t>& B,
                          std::vector<signed char>& role) {
  if (A.empty() || B.empty()) throw ValidationError("boundary problem: A and B must be non-empty");
  role.assign(N, 0);
  for (auto i : A) {
    if (i >= N) throw ValidationError("boundary problem: state of A outside the lattice");
    role[i] = 1;
  }
  for (auto i : B) {
    if (i >= N) throw ValidationError("boundary problem: state of B outside the lattice");
    if (role[i] == 1) throw ValidationError("boundary problem: A and B intersect");
    role[i] = -1;
  }
}

// multi-source BFS assigning each unsolved node the value of its nearest boundary set
inline void fill_nearest(const ConductanceGraph& g, const std::vector<signed char>& role,
                         const std::vector<char>& solved, std::vector<double>& phi, std::vector<double>& psi) {
  std::deque<std::size_t> queue;
  std::vector<char> seen(g.size(), 0);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (role[i] != 0) {
      seen[i] = 1;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.targets[e];
      if (seen[j]) continue;
      seen[j] = 1;
      if (!solved[j]) {
        phi[j] = phi[i] > 0.5 ? 1.0 : 0.0;
        psi[j] = 1.0 - phi[j];
      }
      queue.push_back(j);
    }
  }
}

}  // namespace detail

/**
 * @brief Solves the Dirichlet problem on the interior of (A, B).
 *
 * Default method: banded Kron reduction (star-mesh elimination) in node order.
 * Every update adds products of positive conductances, so phi, psi and the effective
 * conductance keep relative accuracy even when the capacity is hundreds of e-folds
 * below the well weights. Jacobi-preconditioned CG on the symmetric conductance
 * system is used when the band is too wide.
 */
inline HarmonicSolution solve_harmonic(const ConductanceGraph& g, const std::vector<std::size_t>& A,
                                       const std::vector<std::size_t>& B, const SolverOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t N = g.size();
  std::vector<signed char> role;
  detail::validate_sets(N, A, B, role);

  double ref = -kInf;
  for (double lc : g.log_c) ref = std::max(ref, lc);
  double wmax = -kInf;
  for (double w : g.log_weight) wmax = std::max(wmax, w);
  const double cut = opt.prune ? wmax - opt.prune_log10 * std::log(10.0) : -kInf;

  HarmonicSolution sol;
  sol.phi.assign(N, 0.0);
  sol.psi.assign(N, 1.0);
  std::vector<char> solved(N, 0);
  for (std::size_t i = 0; i < N; ++i)
    if (role[i] != 0) {
      solved[i] = 1;
      sol.phi[i] = role[i] > 0 ? 1.0 : 0.0;
      sol.psi[i] = 1.0 - sol.phi[i];
    }

  // interior nodes that survive pruning and connect to the boundary
  std::vector<char> active(N, 0);
  {
    std::deque<std::size_t> queue;
    std::vector<char> seen(N, 0);
    for (std::size_t i = 0; i < N; ++i)
      if (role[i] != 0) {
        seen[i] = 1;
        queue.push_back(i);
      }
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
        const std::size_t j = g.targets[e];
        if (seen[j] || role[j] != 0 || g.log_weight[j] < cut) continue;
        seen[j] = 1;
        active[j] = 1;
        queue.push_back(j);
      }
    }
    for (std::size_t i = 0; i < N; ++i)
      if (role[i] == 0 && !active[i]) {
        if (g.log_weight[i] < cut) ++sol.stats.pruned;
        else ++sol.stats.disconnected;
      }
  }
  std::vector<std::size_t> nodes, local(N, static_cast<std::size_t>(-1));
  for (std::size_t i = 0; i < N; ++i)
    if (active[i]) {
      local[i] = nodes.size();
      nodes.push_back(i);
    }
  const std::size_t M = nodes.size();
  sol.stats.active = M;

  std::size_t bw = 0;
  for (std::size_t k = 0; k < M; ++k) {
    const std::size_t i = nodes[k];
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.targets[e];
      if (active[j] && local[j] > k) bw = std::max(bw, local[j] - k);
    }
  }
  sol.stats.bandwidth = bw;
  const double work = static_cast<double>(M) * static_cast<double>(bw) * static_cast<double>(bw) / 2.0;
  const double memory = static_cast<double>(M) * static_cast<double>(bw);
  const bool banded = !opt.force_cg && work <= opt.band_work_budget && memory <= opt.band_memory_budget;
  // elimination only adds and multiplies, so the largest conductance may sit near the top of the range
  if (banded) ref -= 650.0;
  double direct = 0.0;  // A-B edges
  for (std::size_t i = 0; i < N; ++i)
    if (role[i] > 0)
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
        if (role[g.targets[e]] < 0) direct += std::exp(g.log_c[e] - ref);

  if (banded) {
    sol.stats.method = "banded-elimination";
    const std::size_t W = std::max<std::size_t>(bw, 1);
    std::vector<double> U(M * W, 0.0), gA(M, 0.0), gB(M, 0.0), d(M, 0.0);
    for (std::size_t k = 0; k < M; ++k) {
      const std::size_t i = nodes[k];
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
        const std::size_t j = g.targets[e];
        const double c = std::exp(g.log_c[e] - ref);
        if (role[j] > 0) gA[k] += c;
        else if (role[j] < 0) gB[k] += c;
        else if (active[j] && local[j] > k) U[k * W + (local[j] - k - 1)] += c;
      }
    }
    double cap = direct;
    for (std::size_t k = 0; k < M; ++k) {
      double* row = &U[k * W];
      const std::size_t span = std::min(W, M - k - 1);
      double dk = gA[k] + gB[k];
      for (std::size_t s = 0; s < span; ++s) dk += row[s];
      d[k] = dk;
      if (dk == 0.0) continue;
      cap += gA[k] * (gB[k] / dk);
      for (std::size_t s = 0; s < span; ++s) {
        if (row[s] == 0.0) continue;
        const double f = row[s] / dk;
        const std::size_t i = k + 1 + s;
        double* ri = &U[i * W];
        for (std::size_t t = s + 1; t < span; ++t) ri[t - s - 1] += f * row[t];
        gA[i] += f * gA[k];
        gB[i] += f * gB[k];
      }
    }
    std::vector<double> phi(M, 0.0), psi(M, 0.0);
    for (std::size_t k = M; k-- > 0;) {
      if (d[k] == 0.0) {
        ++sol.stats.disconnected;
        continue;
      }
      const double* row = &U[k * W];
      const std::size_t span = std::min(W, M - k - 1);
      double a = gA[k], b = gB[k];
      for (std::size_t s = 0; s < span; ++s) {
        a += row[s] * phi[k + 1 + s];
        b += row[s] * psi[k + 1 + s];
      }
      phi[k] = a / d[k];
      psi[k] = b / d[k];
    }
    for (std::size_t k = 0; k < M; ++k) {
      sol.phi[nodes[k]] = phi[k];
      sol.psi[nodes[k]] = psi[k];
      solved[nodes[k]] = d[k] > 0.0;
    }
    if (!(cap > 0.0)) throw NumericalError("solve_harmonic: A and B are not connected");
    sol.log_capacity = std::log(cap) + ref;
    sol.stats.iterations = M;
  } else {
    sol.stats.method = "pcg";
    // scaled conductances on the interior
    std::vector<double> diag(M, 0.0), bA(M, 0.0), bB(M, 0.0);
    std::vector<std::size_t> off{0}, col;
    std::vector<double> val;
    for (std::size_t k = 0; k < M; ++k) {
      const std::size_t i = nodes[k];
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
        const std::size_t j = g.targets[e];
        const double c = std::exp(g.log_c[e] - ref);
        if (role[j] > 0) {
          bA[k] += c;
          diag[k] += c;
        } else if (role[j] < 0) {
          bB[k] += c;
          diag[k] += c;
        } else if (active[j]) {
          diag[k] += c;
          col.push_back(local[j]);
          val.push_back(c);
        }
      }
      off.push_back(col.size());
    }
    const std::size_t max_iter = static_cast<std::size_t>(50.0 * std::sqrt(static_cast<double>(std::max<std::size_t>(M, 1)))) + 100;
    auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
      for (std::size_t k = 0; k < M; ++k) {
        double s = diag[k] * x[k];
        for (std::size_t e = off[k]; e < off[k + 1]; ++e) s -= val[e] * x[col[e]];
        y[k] = s;
      }
    };
    auto pcg = [&](const std::vector<double>& b, std::vector<double>& x) {
      x.assign(M, 0.0);
      for (std::size_t k = 0; k < M; ++k) x[k] = diag[k] > 0.0 ? b[k] / diag[k] : 0.0;
      std::vector<double> r(M), z(M), p(M), q(M);
      apply(x, q);
      double bnorm = 0.0;
      for (std::size_t k = 0; k < M; ++k) {
        r[k] = b[k] - q[k];
        z[k] = diag[k] > 0.0 ? r[k] / diag[k] : 0.0;
        p[k] = z[k];
        bnorm += diag[k] > 0.0 ? b[k] * b[k] / diag[k] : 0.0;
      }
      bnorm = std::sqrt(bnorm);
      double rz = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
      std::size_t it = 0;
      double rel = bnorm > 0.0 ? std::sqrt(std::max(rz, 0.0)) / bnorm : 0.0;
      while (rel > opt.cg_tolerance && it < max_iter) {
        apply(p, q);
        const double alpha = rz / std::inner_product(p.begin(), p.end(), q.begin(), 0.0);
        for (std::size_t k = 0; k < M; ++k) {
          x[k] += alpha * p[k];
          r[k] -= alpha * q[k];
          z[k] = diag[k] > 0.0 ? r[k] / diag[k] : 0.0;
        }
        const double rz_new = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
        for (std::size_t k = 0; k < M; ++k) p[k] = z[k] + (rz_new / rz) * p[k];
        rz = rz_new;
        rel = std::sqrt(std::max(rz, 0.0)) / bnorm;
        ++it;
      }
      sol.stats.iterations += it;
      sol.stats.residual = std::max(sol.stats.residual, rel);
      if (rel > opt.cg_tolerance)
        throw NumericalError("solve_harmonic: conjugate gradient did not converge (residual " + std::to_string(rel) + ")");
    };
    std::vector<double> phi, psi;
    if (M > 0) {
      pcg(bA, phi);
      pcg(bB, psi);
    }
    for (std::size_t k = 0; k < M; ++k) {
      sol.phi[nodes[k]] = std::clamp(phi[k], 0.0, 1.0);
      sol.psi[nodes[k]] = std::clamp(psi[k], 0.0, 1.0);
      solved[nodes[k]] = 1;
    }
    double flux = direct;
    for (std::size_t k = 0; k < M; ++k) flux += bA[k] * sol.psi[nodes[k]];
    if (!(flux > 0.0)) throw NumericalError("solve_harmonic: A and B are not connected");
    sol.log_capacity = std::log(flux) + ref;
  }
  detail::fill_nearest(g, role, solved, sol.phi, sol.psi);
  sol.stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

//! log of (1/2) sum Q(i) r(i,j) (f(j) - f(i))^2, i.e. sum over undirected edges.
inline double log_dirichlet_form(const ConductanceGraph& g, const std::vector<double>& f) {
  if (f.size() != g.size()) throw ValidationError("dirichlet_form: function has wrong length");
  std::vector<double> terms;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.targets[e];
      if (j <= i) continue;
      const double df = f[j] - f[i];
      if (!std::isfinite(df)) throw ValidationError("dirichlet_form: non-finite function value");
      if (df != 0.0) terms.push_back(g.log_c[e] + 2.0 * std::log(std::abs(df)));
    }
  return log_sum_exp(terms);
}

//! Dirichlet form of the equilibrium potential, with each edge difference taken
//! from phi or psi, whichever is smaller there.
inline double log_dirichlet_form(const ConductanceGraph& g, const HarmonicSolution& h) {
  std::vector<double> terms;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.targets[e];
      if (j <= i) continue;
      const double df = h.phi[i] + h.phi[j] < 1.0 ? h.phi[j] - h.phi[i] : h.psi[i] - h.psi[j];
      if (df != 0.0) terms.push_back(g.log_c[e] + 2.0 * std::log(std::abs(df)));
    }
  return log_sum_exp(terms);
}

//! log sum_{i in A, j} Q(i) r(i,j) (1 - phi(j)).
inline double log_flux_capacity(const ConductanceGraph& g, const HarmonicSolution& h, const std::vector<std::size_t>& A) {
  std::vector<double> terms;
  for (auto i : A)
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const double p = h.psi[g.targets[e]];
      if (p > 0.0) terms.push_back(g.log_c[e] + std::log(p));
    }
  return log_sum_exp(terms);
}

//! log sum_i Q(i) phi(i).
inline double log_valley_mass(const ConductanceGraph& g, const HarmonicSolution& h) {
  std::vector<double> terms;
  terms.reserve(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (h.phi[i] > 0.0) terms.push_back(g.log_weight[i] + std::log(h.phi[i]));
  return log_sum_exp(terms);
}

struct HittingTime {
  double log_mean = kInf;  // log E^nu[tau_B]
  std::vector<std::size_t> support;  // states of A
  std::vector<double> nu;            // probabilities on support
};

/**
 * @brief E^nu[tau_B] = sum Q phi / cap with nu(i) proportional to Q(i) P^i(tau_B < tau_A)
 * on A, i.e. to the escape flux out of i.
 */
inline HittingTime mean_hitting(const ConductanceGraph& g, const HarmonicSolution& h, const std::vector<std::size_t>& A) {
  HittingTime r;
  r.log_mean = log_valley_mass(g, h) - h.log_capacity;
  std::vector<double> lf;
  for (auto i : A) {
    std::vector<double> terms;
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const double p = h.psi[g.targets[e]];
      if (p > 0.0) terms.push_back(g.log_c[e] + std::log(p));
    }
    r.support.push_back(i);
    lf.push_back(log_sum_exp(terms));
  }
  const double total = log_sum_exp(lf);
  for (double x : lf) r.nu.push_back(std::exp(x - total));
  return r;
}

/**
 * @brief Share of sum Q phi carried by the connected component of
 * {log Q >= max_A log Q - depth} that contains the best state of A.
 */
inline double sublevel_fraction(const ConductanceGraph& g, const HarmonicSolution& h, const std::vector<std::size_t>& A,
                                double depth) {
  std::size_t best = A.front();
  for (auto i : A)
    if (g.log_weight[i] > g.log_weight[best]) best = i;
  const double level = g.log_weight[best] - depth;
  std::vector<char> in(g.size(), 0);
  std::deque<std::size_t> queue{best};
  in[best] = 1;
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.targets[e];
      if (!in[j] && g.log_weight[j] >= level && g.log_c[e] > -kInf) {
        in[j] = 1;
        queue.push_back(j);
      }
    }
  }
  std::vector<double> part;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (in[i] && h.phi[i] > 0.0) part.push_back(g.log_weight[i] + std::log(h.phi[i]));
  return std::exp(log_sum_exp(part) - log_valley_mass(g, h));
}

struct CapacityReport {
  double log_capacity = -kInf;
  double log_capacity_flux = -kInf;
  double log_capacity_dirichlet = -kInf;
  double log_valley_mass = -kInf;
  HittingTime hitting;
  HarmonicSolution solution;
};

inline CapacityReport capacity_report(const ConductanceGraph& g, const std::vector<std::size_t>& A,
                                      const std::vector<std::size_t>& B, const SolverOptions& opt = {}) {
  CapacityReport r;
  r.solution = solve_harmonic(g, A, B, opt);
  r.log_capacity = r.solution.log_capacity;
  r.log_capacity_flux = log_flux_capacity(g, r.solution, A);
  r.log_capacity_dirichlet = log_dirichlet_form(g, r.solution);
  r.log_valley_mass = log_valley_mass(g, r.solution);
  r.hitting = mean_hitting(g, r.solution, A);
  return r;
}

}  // namespace hopmeta
