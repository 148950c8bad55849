#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include "hopmeta/disorder.hpp"
#include "hopmeta/errors.hpp"
#include "hopmeta/ldp.hpp"
#include "hopmeta/model.hpp"

namespace hopmeta {

/**
 * @brief The lumped Metropolis chain on the plus-count lattice.
 *
 * Rates are recomputed from counts on demand; v(X) per state is cached by the
 * underlying measure.
 */
class LatticeChain {
 public:
  LatticeChain(TypeTable table, double beta, Potential v, double state_budget = 5e6)
      : measure_(std::make_shared<LumpedMeasure>(std::move(table), beta, std::move(v), state_budget)) {}

  explicit LatticeChain(std::shared_ptr<const LumpedMeasure> measure) : measure_(std::move(measure)) {}

  const LumpedMeasure& measure() const { return *measure_; }
  std::shared_ptr<const LumpedMeasure> measure_ptr() const { return measure_; }
  const TypeTable& table() const { return measure_->table(); }
  const Lattice& lattice() const { return measure_->lattice(); }
  std::size_t size() const { return lattice().size(); }
  std::size_t directions() const { return 2 * table().size(); }
  long n() const { return table().n(); }

  std::optional<std::size_t> neighbor(std::size_t i, std::size_t l) const {
    const std::size_t a = direction_type(l);
    const long k = lattice().plus(i, a);
    if (direction_raises(l)) {
      if (k == table().count(a)) return std::nullopt;
      return i + lattice().stride(a);
    }
    if (k == 0) return std::nullopt;
    return i - lattice().stride(a);
  }

  //! Number of flippable sites for direction l at state i (n Y_a^+ or n Y_a^-).
  long movable(std::size_t i, std::size_t l) const {
    const std::size_t a = direction_type(l);
    const long k = lattice().plus(i, a);
    return direction_raises(l) ? table().count(a) - k : k;
  }

  double log_rate(std::size_t i, std::size_t l) const {
    auto j = neighbor(i, l);
    if (!j) return -kInf;
    const auto& v = measure_->v_values();
    const double dv = v[i] - v[*j];
    const double nd = static_cast<double>(n());
    return std::log(static_cast<double>(movable(i, l)) / nd) - measure_->beta() * nd * std::max(dv, 0.0);
  }

  double rate(std::size_t i, std::size_t l) const {
    auto j = neighbor(i, l);
    if (!j) return 0.0;
    const auto& v = measure_->v_values();
    const double nd = static_cast<double>(n());
    return static_cast<double>(movable(i, l)) / nd * std::exp(-measure_->beta() * nd * std::max(v[i] - v[*j], 0.0));
  }

  double holding(std::size_t i) const {
    double s = 0.0;
    for (std::size_t l = 0; l < directions(); ++l) s += rate(i, l);
    return 1.0 - s;
  }

 private:
  std::shared_ptr<const LumpedMeasure> measure_;
};

/**
 * @brief Single-site Metropolis dynamics on {-1,1}^n, states encoded as bit masks
 * (bit i set means sigma_i = +1). Meant for exhaustive checks at small n.
 */
class SpinChain {
 public:
  SpinChain(PatternEnsemble ensemble, double beta, Potential v, std::size_t max_sites = 20)
      : ensemble_(std::move(ensemble)), table_(type_decomposition(ensemble_)), beta_(beta), v_(std::move(v)) {
    if (ensemble_.n > max_sites) throw ValidationError("spin chain: too many sites to enumerate");
    const std::size_t N = std::size_t{1} << ensemble_.n;
    energy_.resize(N);
    for (std::size_t s = 0; s < N; ++s) energy_[s] = hamiltonian(config(s), ensemble_, v_);
    std::vector<double> lw(N);
    for (std::size_t s = 0; s < N; ++s) lw[s] = -beta_ * energy_[s];
    log_z_ = log_sum_exp(lw);
  }

  std::size_t sites() const { return ensemble_.n; }
  std::size_t size() const { return std::size_t{1} << ensemble_.n; }
  const PatternEnsemble& ensemble() const { return ensemble_; }
  const TypeTable& table() const { return table_; }
  double beta() const { return beta_; }
  const Potential& potential() const { return v_; }

  SpinConfig config(std::size_t s) const {
    SpinConfig c(ensemble_.n);
    for (std::size_t i = 0; i < ensemble_.n; ++i) c[i] = (s >> i) & 1U ? 1 : -1;
    return c;
  }

  double energy(std::size_t s) const { return energy_[s]; }
  double log_mu(std::size_t s) const { return -beta_ * energy_[s] - log_z_; }

  //! p(sigma, sigma^i) = (1/n) exp(-beta (H(sigma^i) - H(sigma))_+)
  double flip_probability(std::size_t s, std::size_t i) const {
    const std::size_t t = s ^ (std::size_t{1} << i);
    return std::exp(-beta_ * std::max(energy_[t] - energy_[s], 0.0)) / static_cast<double>(ensemble_.n);
  }

  double log_flip_probability(std::size_t s, std::size_t i) const {
    const std::size_t t = s ^ (std::size_t{1} << i);
    return -beta_ * std::max(energy_[t] - energy_[s], 0.0) - std::log(static_cast<double>(ensemble_.n));
  }

 private:
  PatternEnsemble ensemble_;
  TypeTable table_;
  double beta_;
  Potential v_;
  std::vector<double> energy_;
  double log_z_ = 0.0;
};

struct LumpCheck {
  double max_rate_error = 0.0;    // relative, over all (Y, l) with a positive lattice rate
  double max_holding_error = 0.0; // absolute
  double max_weight_error = 0.0;  // relative, pushforward of mu vs normalized lumped weight
  std::size_t transitions = 0;
};

/**
 * @brief Pushes the spin chain through sigma -> Y and compares with the lattice chain.
 *
 * The lattice chain must be built on the type table of the spin chain's ensemble.
 */
inline LumpCheck lump_check(const LatticeChain& chain, const SpinChain& spins) {
  const Lattice& lat = chain.lattice();
  const std::size_t L = chain.directions();
  std::vector<double> mass(chain.size(), 0.0);
  std::vector<double> flow(chain.size() * L, 0.0);
  std::vector<double> stay(chain.size(), 0.0);
  for (std::size_t s = 0; s < spins.size(); ++s) {
    const double mu = std::exp(spins.log_mu(s));
    const LatticePoint y = lift(spins.config(s), spins.table());
    const std::size_t yi = lat.index(y);
    mass[yi] += mu;
    double out = 0.0;
    for (std::size_t i = 0; i < spins.sites(); ++i) {
      const double pr = spins.flip_probability(s, i);
      const std::size_t a = spins.table().site_types()[i];
      const bool raises = ((s >> i) & 1U) == 0;
      flow[yi * L + 2 * a + (raises ? 1 : 0)] += mu * pr;
      out += pr;
    }
    stay[yi] += mu * (1.0 - out);
  }
  LumpCheck r;
  for (std::size_t yi = 0; yi < chain.size(); ++yi) {
    const double q = std::exp(chain.measure().log_q(yi));
    r.max_weight_error = std::max(r.max_weight_error, std::abs(mass[yi] - q) / q);
    for (std::size_t l = 0; l < L; ++l) {
      const double pushed = flow[yi * L + l] / mass[yi];
      const double exact = chain.rate(yi, l);
      if (exact > 0.0) {
        r.max_rate_error = std::max(r.max_rate_error, std::abs(pushed - exact) / exact);
        ++r.transitions;
      } else if (pushed != 0.0) {
        r.max_rate_error = std::max(r.max_rate_error, 1.0);
      }
    }
    r.max_holding_error = std::max(r.max_holding_error, std::abs(stay[yi] / mass[yi] - chain.holding(yi)));
  }
  return r;
}

struct ChainCheck {
  double max_balance_error = 0.0;  // |log Q(Y) r(Y,Y') - log Q(Y') r(Y',Y)| / max(1, |log Q(Y) r(Y,Y')|)
  double min_holding = 1.0;
  double max_holding = 0.0;
  bool stochastic = true;
  bool irreducible = true;
};

//! Detailed balance on every edge, holding probabilities in [0,1], and irreducibility.
inline ChainCheck check_chain(const LatticeChain& chain) {
  ChainCheck r;
  const LumpedMeasure& m = chain.measure();
  std::vector<std::size_t> parent(chain.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < chain.size(); ++i) {
    double out = 0.0;
    for (std::size_t l = 0; l < chain.directions(); ++l) {
      const double r_il = chain.rate(i, l);
      out += r_il;
      auto j = chain.neighbor(i, l);
      if (!j) continue;
      const double fwd = m.log_q(i) + chain.log_rate(i, l);
      const double bwd = m.log_q(*j) + chain.log_rate(*j, reverse_direction(l));
      r.max_balance_error = std::max(r.max_balance_error, std::abs(fwd - bwd) / std::max(1.0, std::abs(fwd)));
      if (r_il > 0.0) parent[find(i)] = find(*j);
    }
    const double h = 1.0 - out;
    r.min_holding = std::min(r.min_holding, h);
    r.max_holding = std::max(r.max_holding, h);
    if (h < 0.0 || h > 1.0 || out + h != 1.0) r.stochastic = false;
  }
  const std::size_t root = find(0);
  for (std::size_t i = 0; i < chain.size(); ++i)
    if (find(i) != root) {
      r.irreducible = false;
      break;
    }
  return r;
}

}  // namespace hopmeta
