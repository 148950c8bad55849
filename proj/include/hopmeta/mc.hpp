#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "hopmeta/chain.hpp"
#include "hopmeta/errors.hpp"
#include "hopmeta/potential.hpp"
#include "hopmeta/rng.hpp"

namespace hopmeta {

/**
 * @brief Discrete-time jump chain stored as per-state cumulative probabilities.
 *
 * Row i lists its neighbours with cumulative move probabilities; the remaining
 * mass 1 - cum.back() is the holding probability.
 */
struct JumpTable {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> targets;
  std::vector<double> cum;
  std::size_t size() const { return offsets.size() - 1; }

  void add_row(const std::vector<std::pair<std::size_t, double>>& moves) {
    double c = 0.0;
    for (const auto& [j, p] : moves) {
      if (!(p >= 0.0)) throw ValidationError("jump table: negative transition probability");
      if (p == 0.0) continue;
      c += p;
      targets.push_back(j);
      cum.push_back(c);
    }
    if (c > 1.0 + 1e-12) throw ValidationError("jump table: row sums exceed one");
    offsets.push_back(targets.size());
  }

  //! Next state from a uniform u in [0,1).
  std::size_t step(std::size_t i, double u) const {
    const auto b = cum.begin() + static_cast<std::ptrdiff_t>(offsets[i]);
    const auto e = cum.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]);
    const auto it = std::upper_bound(b, e, u);
    return it == e ? i : targets[offsets[i] + static_cast<std::size_t>(it - b)];
  }
};

inline JumpTable jump_table(const LatticeChain& chain) {
  JumpTable t;
  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    row.clear();
    for (std::size_t l = 0; l < chain.directions(); ++l)
      if (auto j = chain.neighbor(i, l)) row.emplace_back(*j, chain.rate(i, l));
    t.add_row(row);
  }
  return t;
}

inline JumpTable jump_table(const SpinChain& spins) {
  JumpTable t;
  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t s = 0; s < spins.size(); ++s) {
    row.clear();
    for (std::size_t i = 0; i < spins.sites(); ++i) row.emplace_back(s ^ (std::size_t{1} << i), spins.flip_probability(s, i));
    t.add_row(row);
  }
  return t;
}

//! Start law: a distribution over states, or a single state when support has one entry.
struct StartLaw {
  std::vector<std::size_t> support;
  std::vector<double> probs;

  static StartLaw fixed(std::size_t s) { return {{s}, {1.0}}; }
  static StartLaw from(const HittingTime& h) { return {h.support, h.nu}; }
};

struct McOptions {
  std::size_t trajectories = 2000;
  std::uint64_t seed = 1;
  std::uint64_t max_steps = 100'000'000;    // per trajectory; longer ones are censored
  double total_step_budget = 5e10;          // refuse if trajectories * predicted mean exceeds this
  std::optional<double> predicted_mean;
  std::size_t batches = 20;
  std::size_t threads = 0;                  // 0: hardware concurrency
};

struct McResult {
  std::vector<std::uint64_t> samples;  // completed trajectories, in trajectory order
  std::vector<std::size_t> ids;        // trajectory id of each sample
  std::vector<std::size_t> censored;   // trajectory ids that hit max_steps
  double mean = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0, ci_high = 0.0;  // 95%, from log batch means
  double ks_statistic = 0.0;
  double ks_pvalue = 1.0;
  bool partial() const { return !censored.empty(); }
};

//! P(K > lambda) for the Kolmogorov distribution.
inline double kolmogorov_survival(double lambda) {
  if (lambda < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double t = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 ? 2.0 : -2.0) * t;
    if (t < 1e-17) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

//! One-sample KS test of x / mean(x) against Exp(1); p-value with Stephens' small-sample correction.
inline std::pair<double, double> ks_exponential(const std::vector<double>& x) {
  if (x.empty()) return {0.0, 1.0};
  std::vector<double> u(x);
  double m = 0.0;
  for (double v : u) m += v;
  m /= static_cast<double>(u.size());
  std::sort(u.begin(), u.end());
  const double N = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double F = 1.0 - std::exp(-u[i] / m);
    d = std::max({d, static_cast<double>(i + 1) / N - F, F - static_cast<double>(i) / N});
  }
  const double sn = std::sqrt(N);
  return {d, kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)};
}

namespace detail {

inline void summarize(McResult& r, std::size_t batches) {
  const std::size_t K = r.samples.size();
  if (K == 0) return;
  double s = 0.0;
  for (auto v : r.samples) s += static_cast<double>(v);
  r.mean = s / static_cast<double>(K);
  double ss = 0.0;
  for (auto v : r.samples) ss += (static_cast<double>(v) - r.mean) * (static_cast<double>(v) - r.mean);
  r.std_error = K > 1 ? std::sqrt(ss / static_cast<double>(K - 1) / static_cast<double>(K)) : 0.0;

  const std::size_t B = std::clamp<std::size_t>(batches, 2, std::max<std::size_t>(2, K / 2));
  std::vector<double> lb;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t lo = b * K / B, hi = (b + 1) * K / B;
    if (hi <= lo) continue;
    double m = 0.0;
    for (std::size_t i = lo; i < hi; ++i) m += static_cast<double>(r.samples[i]);
    lb.push_back(std::log(m / static_cast<double>(hi - lo)));
  }
  if (lb.size() >= 2) {
    double mu = 0.0;
    for (double v : lb) mu += v;
    mu /= static_cast<double>(lb.size());
    double var = 0.0;
    for (double v : lb) var += (v - mu) * (v - mu);
    const double se = std::sqrt(var / static_cast<double>(lb.size() - 1) / static_cast<double>(lb.size()));
    r.ci_low = std::exp(mu - 1.96 * se);
    r.ci_high = std::exp(mu + 1.96 * se);
  } else {
    r.ci_low = r.ci_high = r.mean;
  }
  std::vector<double> x(r.samples.begin(), r.samples.end());
  std::tie(r.ks_statistic, r.ks_pvalue) = ks_exponential(x);
}

}  // namespace detail

/**
 * @brief Simulates trajectories until they enter the target set and records the step counts.
 *
 * Trajectory t draws from CounterRng(seed, t): first its start state, then one
 * uniform per step, so results are independent of the thread count.
 */
inline McResult simulate_hits(const JumpTable& table, const StartLaw& start, const std::vector<std::size_t>& target,
                              const McOptions& opt = {}) {
  const std::size_t N = table.size();
  if (start.support.empty() || start.support.size() != start.probs.size())
    throw ValidationError("simulate_hits: malformed start law");
  if (target.empty()) throw ValidationError("simulate_hits: empty target set");
  if (opt.trajectories == 0) throw ValidationError("simulate_hits: trajectory count must be positive");
  std::vector<char> in_b(N, 0);
  for (auto b : target) {
    if (b >= N) throw ValidationError("simulate_hits: target state out of range");
    in_b[b] = 1;
  }
  std::vector<double> cum;
  double c = 0.0;
  for (std::size_t k = 0; k < start.support.size(); ++k) {
    if (start.support[k] >= N) throw ValidationError("simulate_hits: start state out of range");
    if (in_b[start.support[k]] && start.probs[k] > 0.0) throw ValidationError("simulate_hits: start law charges the target set");
    c += start.probs[k];
    cum.push_back(c);
  }
  if (!(c > 0.0)) throw ValidationError("simulate_hits: start law has no mass");
  if (opt.predicted_mean && *opt.predicted_mean * static_cast<double>(opt.trajectories) > opt.total_step_budget)
    throw ValidationError("simulate_hits: predicted work of " +
                          std::to_string(*opt.predicted_mean * static_cast<double>(opt.trajectories)) +
                          " steps exceeds the step budget");

  const std::size_t K = opt.trajectories;
  std::vector<std::uint64_t> tau(K, 0);
  std::vector<char> cens(K, 0);
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t t = first; t < K; t += stride) {
      CounterRng rng(opt.seed, t);
      const double u0 = rng.uniform() * c;
      std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u0) - cum.begin());
      std::size_t x = start.support[std::min(k, start.support.size() - 1)];
      std::uint64_t steps = 0;
      while (!in_b[x]) {
        if (steps == opt.max_steps) {
          cens[t] = 1;
          break;
        }
        x = table.step(x, rng.uniform());
        ++steps;
      }
      tau[t] = steps;
    }
  };
  std::size_t threads = opt.threads ? opt.threads : std::max(1U, std::thread::hardware_concurrency());
  threads = std::min(threads, K);
  if (threads <= 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(run, w, threads);
    for (auto& th : pool) th.join();
  }

  McResult r;
  for (std::size_t t = 0; t < K; ++t) {
    if (cens[t]) {
      r.censored.push_back(t);
    } else {
      r.samples.push_back(tau[t]);
      r.ids.push_back(t);
    }
  }
  detail::summarize(r, opt.batches);
  return r;
}

inline void write_samples_csv(std::ostream& os, const McResult& r) {
  os << "trajectory,tau,censored\n";
  std::size_t a = 0, b = 0;
  while (a < r.ids.size() || b < r.censored.size()) {
    if (b == r.censored.size() || (a < r.ids.size() && r.ids[a] < r.censored[b])) {
      os << r.ids[a] << ',' << r.samples[a] << ",0\n";
      ++a;
    } else {
      os << r.censored[b] << ",,1\n";
      ++b;
    }
  }
}

}  // namespace hopmeta
