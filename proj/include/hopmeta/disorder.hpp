#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hopmeta/errors.hpp"
#include "hopmeta/rng.hpp"

namespace hopmeta {

//! Discrete law of one pattern coordinate. Support is kept sorted ascending.
class PatternDistribution {
 public:
  PatternDistribution(std::vector<double> support, std::vector<double> probabilities) {
    if (support.empty() || support.size() != probabilities.size())
      throw ValidationError("pattern distribution: support and probabilities must be non-empty and of equal length");
    std::vector<std::size_t> order(support.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return support[i] < support[j]; });
    double total = 0.0;
    for (auto i : order) {
      double s = support[i], q = probabilities[i];
      if (!std::isfinite(s) || s < -1.0 || s > 1.0)
        throw ValidationError("pattern distribution: support value outside [-1,1]");
      if (!(q > 0.0))
        throw ValidationError("pattern distribution: probabilities must be strictly positive");
      if (!support_.empty() && s == support_.back())
        throw ValidationError("pattern distribution: duplicate support value");
      support_.push_back(s);
      probs_.push_back(q);
      total += q;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw ValidationError("pattern distribution: probabilities must sum to 1");
    cdf_.resize(probs_.size());
    std::partial_sum(probs_.begin(), probs_.end(), cdf_.begin());
    cdf_.back() = 1.0;
  }

  static PatternDistribution dirac(double value) { return {{value}, {1.0}}; }

  static PatternDistribution uniform(std::vector<double> support) {
    std::vector<double> q(support.size(), 1.0 / static_cast<double>(support.size()));
    return {std::move(support), std::move(q)};
  }

  const std::vector<double>& support() const { return support_; }
  const std::vector<double>& probabilities() const { return probs_; }
  std::size_t size() const { return support_.size(); }

  //! Index of the support value selected by a uniform draw u in [0,1).
  std::size_t draw(double u) const {
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), size() - 1);
  }

 private:
  std::vector<double> support_, probs_, cdf_;
};

//! A realization of p patterns on n sites, stored as support indices per site.
struct PatternEnsemble {
  std::size_t n = 0;
  std::vector<PatternDistribution> dists;
  std::vector<std::vector<std::uint32_t>> columns;  // columns[i][j] indexes dists[j].support()

  std::size_t p() const { return dists.size(); }
  double value(std::size_t site, std::size_t pattern) const {
    return dists[pattern].support()[columns[site][pattern]];
  }
};

/**
 * @brief The distinct pattern columns a (types) with their site counts.
 *
 * Types are sorted lexicographically. site_types maps each site to its type;
 * for tables built from explicit counts, sites are assigned in type order.
 */
class TypeTable {
 public:
  TypeTable() = default;

  TypeTable(std::vector<std::vector<double>> types, std::vector<long> counts) {
    if (types.empty() || types.size() != counts.size())
      throw ValidationError("type table: types and counts must be non-empty and of equal length");
    const std::size_t p = types.front().size();
    if (p == 0) throw ValidationError("type table: types must have dimension >= 1");
    std::vector<std::size_t> order(types.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return types[i] < types[j]; });
    for (auto i : order) {
      if (types[i].size() != p) throw ValidationError("type table: inconsistent type dimensions");
      for (double x : types[i])
        if (!std::isfinite(x) || x < -1.0 || x > 1.0)
          throw ValidationError("type table: type entries must lie in [-1,1]");
      if (counts[i] <= 0) throw ValidationError("type table: counts must be positive");
      if (!types_.empty() && types_.back() == types[i]) throw ValidationError("type table: duplicate type");
      types_.push_back(types[i]);
      counts_.push_back(counts[i]);
    }
    n_ = std::accumulate(counts_.begin(), counts_.end(), 0L);
    site_types_.reserve(static_cast<std::size_t>(n_));
    for (std::size_t a = 0; a < counts_.size(); ++a)
      site_types_.insert(site_types_.end(), static_cast<std::size_t>(counts_[a]), a);
  }

  std::size_t size() const { return types_.size(); }
  std::size_t dim() const { return types_.front().size(); }
  long n() const { return n_; }
  const std::vector<std::vector<double>>& types() const { return types_; }
  const std::vector<double>& type(std::size_t a) const { return types_[a]; }
  const std::vector<long>& counts() const { return counts_; }
  long count(std::size_t a) const { return counts_[a]; }
  const std::vector<std::size_t>& site_types() const { return site_types_; }

  //! Quenched type probabilities n_a / n.
  std::vector<double> frequencies() const {
    std::vector<double> q(size());
    for (std::size_t a = 0; a < size(); ++a) q[a] = static_cast<double>(counts_[a]) / static_cast<double>(n_);
    return q;
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t a = 0; a < size(); ++a) {
      os << "(";
      for (std::size_t j = 0; j < dim(); ++j) os << (j ? "," : "") << types_[a][j];
      os << ")x" << counts_[a] << ";";
    }
    return os.str();
  }

 private:
  friend TypeTable type_decomposition(const PatternEnsemble&);
  std::vector<std::vector<double>> types_;
  std::vector<long> counts_;
  long n_ = 0;
  std::vector<std::size_t> site_types_;
};

inline PatternEnsemble sample_patterns(const std::vector<PatternDistribution>& dists, std::size_t n,
                                       std::uint64_t seed) {
  if (dists.empty()) throw ValidationError("sample_patterns: need at least one pattern distribution");
  if (n == 0) throw ValidationError("sample_patterns: n must be positive");
  PatternEnsemble e;
  e.n = n;
  e.dists = dists;
  e.columns.assign(n, std::vector<std::uint32_t>(dists.size()));
  for (std::size_t j = 0; j < dists.size(); ++j) {
    CounterRng rng(seed, j);
    for (std::size_t i = 0; i < n; ++i) e.columns[i][j] = static_cast<std::uint32_t>(dists[j].draw(rng.uniform()));
  }
  return e;
}

//! Deterministic ensemble whose type counts are n times the product law, rounded by largest remainder.
inline PatternEnsemble expected_patterns(const std::vector<PatternDistribution>& dists, std::size_t n) {
  if (dists.empty()) throw ValidationError("expected_patterns: need at least one pattern distribution");
  if (n == 0) throw ValidationError("expected_patterns: n must be positive");
  std::vector<std::vector<std::uint32_t>> cells{{}};
  std::vector<double> mass{1.0};
  for (const auto& d : dists) {
    std::vector<std::vector<std::uint32_t>> next;
    std::vector<double> next_mass;
    for (std::size_t c = 0; c < cells.size(); ++c)
      for (std::uint32_t k = 0; k < d.size(); ++k) {
        auto cell = cells[c];
        cell.push_back(k);
        next.push_back(std::move(cell));
        next_mass.push_back(mass[c] * d.probabilities()[k]);
      }
    cells = std::move(next);
    mass = std::move(next_mass);
  }
  std::vector<std::size_t> counts(cells.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    double exact = mass[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(-(exact - std::floor(exact)), c);
  }
  std::sort(remainders.begin(), remainders.end());
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r].second];
  PatternEnsemble e;
  e.n = n;
  e.dists = dists;
  for (std::size_t c = 0; c < cells.size(); ++c) e.columns.insert(e.columns.end(), counts[c], cells[c]);
  return e;
}

inline TypeTable type_decomposition(const PatternEnsemble& e) {
  if (e.columns.size() != e.n || e.n == 0) throw ValidationError("type_decomposition: malformed ensemble");
  std::map<std::vector<std::uint32_t>, long> tally;
  for (const auto& col : e.columns) {
    if (col.size() != e.p()) throw ValidationError("type_decomposition: column length differs from p");
    for (std::size_t j = 0; j < col.size(); ++j)
      if (col[j] >= e.dists[j].size()) throw ValidationError("type_decomposition: entry outside support");
    ++tally[col];
  }
  // supports are sorted, so index order is value order
  TypeTable t;
  std::map<std::vector<std::uint32_t>, std::size_t> index;
  for (const auto& [key, count] : tally) {
    std::vector<double> a(key.size());
    for (std::size_t j = 0; j < key.size(); ++j) a[j] = e.dists[j].support()[key[j]];
    index[key] = t.types_.size();
    t.types_.push_back(std::move(a));
    t.counts_.push_back(count);
  }
  t.n_ = static_cast<long>(e.n);
  t.site_types_.reserve(e.n);
  for (const auto& col : e.columns) t.site_types_.push_back(index.at(col));
  return t;
}

inline TypeTable fixed_type_table(std::vector<std::vector<double>> types, std::vector<long> counts) {
  return TypeTable(std::move(types), std::move(counts));
}

//! Site-level ensemble realizing a table: coordinate laws are the empirical marginals.
inline PatternEnsemble ensemble_from_table(const TypeTable& t) {
  PatternEnsemble e;
  e.n = static_cast<std::size_t>(t.n());
  for (std::size_t j = 0; j < t.dim(); ++j) {
    std::map<double, long> tally;
    for (std::size_t a = 0; a < t.size(); ++a) tally[t.type(a)[j]] += t.count(a);
    std::vector<double> s, q;
    for (const auto& [value, c] : tally) {
      s.push_back(value);
      q.push_back(static_cast<double>(c) / static_cast<double>(t.n()));
    }
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < q.size(); ++k) total += q[k];
    q.back() = 1.0 - total;
    e.dists.emplace_back(std::move(s), std::move(q));
  }
  for (std::size_t i = 0; i < e.n; ++i) {
    const auto& type = t.type(t.site_types()[i]);
    std::vector<std::uint32_t> col(t.dim());
    for (std::size_t j = 0; j < t.dim(); ++j) {
      const auto& sup = e.dists[j].support();
      col[j] = static_cast<std::uint32_t>(std::lower_bound(sup.begin(), sup.end(), type[j]) - sup.begin());
    }
    e.columns.push_back(std::move(col));
  }
  return e;
}

}  // namespace hopmeta
