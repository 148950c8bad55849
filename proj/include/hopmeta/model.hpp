#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hopmeta/disorder.hpp"
#include "hopmeta/errors.hpp"

namespace hopmeta {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

//! One term coef * prod_j x_j^powers[j] of a polynomial potential.
struct Monomial {
  double coef = 0.0;
  std::vector<int> powers;
};

/**
 * @brief Polynomial potential v on [-1,1]^p with analytic gradient and Hessian.
 *
 * Both built-ins are polynomials, so one representation covers everything.
 */
class Potential {
 public:
  Potential(std::size_t p, std::vector<Monomial> terms, std::string name = "polynomial")
      : p_(p), terms_(std::move(terms)), name_(std::move(name)) {
    if (p_ == 0) throw ValidationError("potential: dimension must be positive");
    for (const auto& t : terms_) {
      if (t.powers.size() != p_) throw ValidationError("potential: monomial has wrong number of powers");
      for (int e : t.powers)
        if (e < 0) throw ValidationError("potential: negative exponent");
      if (!std::isfinite(t.coef)) throw ValidationError("potential: non-finite coefficient");
    }
  }

  //! v(x) = sum_i x_i^2
  static Potential hopfield(std::size_t p) {
    std::vector<Monomial> t;
    for (std::size_t i = 0; i < p; ++i) {
      Monomial m{1.0, std::vector<int>(p, 0)};
      m.powers[i] = 2;
      t.push_back(m);
    }
    return {p, t, "hopfield"};
  }

  //! v(x) = sum_{i<p} x_i^2 + h x_p
  static Potential random_field(std::size_t p, double h = 1.0) {
    std::vector<Monomial> t;
    for (std::size_t i = 0; i + 1 < p; ++i) {
      Monomial m{1.0, std::vector<int>(p, 0)};
      m.powers[i] = 2;
      t.push_back(m);
    }
    Monomial f{h, std::vector<int>(p, 0)};
    f.powers[p - 1] = 1;
    t.push_back(f);
    return {p, t, "random_field"};
  }

  std::size_t dim() const { return p_; }
  const std::string& name() const { return name_; }
  const std::vector<Monomial>& terms() const { return terms_; }

  double value(const Vec& x) const {
    check(x);
    double v = 0.0;
    for (const auto& t : terms_) v += t.coef * product(x, t.powers, -1, -1);
    return v;
  }

  Vec gradient(const Vec& x) const {
    check(x);
    Vec g = Vec::Zero(static_cast<Eigen::Index>(p_));
    for (const auto& t : terms_)
      for (std::size_t i = 0; i < p_; ++i)
        if (t.powers[i] > 0) g[i] += t.coef * t.powers[i] * product(x, t.powers, static_cast<int>(i), -1);
    return g;
  }

  Mat hessian(const Vec& x) const {
    check(x);
    const auto p = static_cast<Eigen::Index>(p_);
    Mat h = Mat::Zero(p, p);
    for (const auto& t : terms_)
      for (std::size_t i = 0; i < p_; ++i) {
        if (t.powers[i] == 0) continue;
        if (t.powers[i] >= 2)
          h(i, i) += t.coef * t.powers[i] * (t.powers[i] - 1) *
                     product(x, t.powers, static_cast<int>(i), static_cast<int>(i));
        for (std::size_t j = i + 1; j < p_; ++j) {
          if (t.powers[j] == 0) continue;
          double c = t.coef * t.powers[i] * t.powers[j] *
                     product(x, t.powers, static_cast<int>(i), static_cast<int>(j));
          h(i, j) += c;
          h(j, i) += c;
        }
      }
    return h;
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    os << name_ << ":";
    for (const auto& t : terms_) {
      os << t.coef << "*[";
      for (std::size_t i = 0; i < p_; ++i) os << (i ? "," : "") << t.powers[i];
      os << "];";
    }
    return os.str();
  }

 private:
  void check(const Vec& x) const {
    if (static_cast<std::size_t>(x.size()) != p_) throw ValidationError("potential: argument has wrong dimension");
  }

  // prod_j x_j^{e_j} with e lowered by one at d1 and at d2 (d = -1 means none)
  static double product(const Vec& x, const std::vector<int>& e, int d1, int d2) {
    double r = 1.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
      int k = e[j] - (static_cast<int>(j) == d1) - (static_cast<int>(j) == d2);
      for (int s = 0; s < k; ++s) r *= x[static_cast<Eigen::Index>(j)];
    }
    return r;
  }

  std::size_t p_;
  std::vector<Monomial> terms_;
  std::string name_;
};

using SpinConfig = std::vector<std::int8_t>;

//! Plus-spin counts per type; the minus count of type a is n_a - plus_counts[a].
struct LatticePoint {
  std::vector<long> plus_counts;
  bool operator==(const LatticePoint&) const = default;
};

namespace detail {

// sum_s value_s * m_s / n over distinct values in ascending order; shared by
// order_params and project so both round identically
inline double grouped_sum(const std::map<double, long>& groups, long n) {
  double s = 0.0;
  for (const auto& [value, m] : groups) s += value * static_cast<double>(m);
  return s / static_cast<double>(n);
}

}  // namespace detail

inline void validate(const LatticePoint& y, const TypeTable& table) {
  if (y.plus_counts.size() != table.size()) throw ValidationError("lattice point: wrong number of types");
  for (std::size_t a = 0; a < table.size(); ++a)
    if (y.plus_counts[a] < 0 || y.plus_counts[a] > table.count(a))
      throw ValidationError("lattice point: plus count outside [0, n_a]");
}

inline Vec project(const LatticePoint& y, const TypeTable& table) {
  validate(y, table);
  Vec x(static_cast<Eigen::Index>(table.dim()));
  for (std::size_t j = 0; j < table.dim(); ++j) {
    std::map<double, long> groups;
    for (std::size_t a = 0; a < table.size(); ++a)
      groups[table.type(a)[j]] += 2 * y.plus_counts[a] - table.count(a);
    x[static_cast<Eigen::Index>(j)] = detail::grouped_sum(groups, table.n());
  }
  return x;
}

inline Vec order_params(const SpinConfig& sigma, const PatternEnsemble& e) {
  if (sigma.size() != e.n) throw ValidationError("order_params: configuration length differs from n");
  Vec x(static_cast<Eigen::Index>(e.p()));
  for (std::size_t j = 0; j < e.p(); ++j) {
    std::map<double, long> groups;
    for (std::size_t i = 0; i < e.n; ++i) groups[e.value(i, j)] += sigma[i];
    x[static_cast<Eigen::Index>(j)] = detail::grouped_sum(groups, static_cast<long>(e.n));
  }
  return x;
}

inline LatticePoint lift(const SpinConfig& sigma, const TypeTable& table) {
  const auto& st = table.site_types();
  if (sigma.size() != st.size()) throw ValidationError("lift: configuration length differs from n");
  LatticePoint y{std::vector<long>(table.size(), 0)};
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] > 0) ++y.plus_counts[st[i]];
  return y;
}

inline double hamiltonian(const LatticePoint& y, const TypeTable& table, const Potential& v) {
  return -static_cast<double>(table.n()) * v.value(project(y, table));
}

inline double hamiltonian(const SpinConfig& sigma, const PatternEnsemble& e, const Potential& v) {
  return -static_cast<double>(e.n) * v.value(order_params(sigma, e));
}

/**
 * @brief Mixed-radix enumeration of all lattice points.
 *
 * The type with the largest radix gets the largest stride, which keeps the
 * bandwidth of the lattice graph equal to the product of the other radices.
 */
class Lattice {
 public:
  explicit Lattice(const TypeTable& table, double state_budget = 5e6) : counts_(table.counts()) {
    double total = 1.0;
    for (long c : counts_) total *= static_cast<double>(c + 1);
    if (total > state_budget)
      throw ValidationError("lattice: " + std::to_string(static_cast<long long>(total)) +
                            " states exceed the state budget; reduce n or the number of types");
    std::vector<std::size_t> order(counts_.size());
    for (std::size_t a = 0; a < order.size(); ++a) order[a] = a;
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return counts_[i] < counts_[j]; });
    strides_.assign(counts_.size(), 0);
    std::size_t s = 1;
    for (auto a : order) {
      strides_[a] = s;
      s *= static_cast<std::size_t>(counts_[a] + 1);
    }
    size_ = s;
    bandwidth_ = size_ / static_cast<std::size_t>(counts_[order.back()] + 1);
  }

  std::size_t size() const { return size_; }
  std::size_t types() const { return counts_.size(); }
  std::size_t stride(std::size_t a) const { return strides_[a]; }
  //! Largest index distance between lattice neighbours.
  std::size_t bandwidth() const { return bandwidth_; }

  long plus(std::size_t index, std::size_t a) const {
    return static_cast<long>((index / strides_[a]) % static_cast<std::size_t>(counts_[a] + 1));
  }

  LatticePoint point(std::size_t index) const {
    LatticePoint y{std::vector<long>(counts_.size())};
    for (std::size_t a = 0; a < counts_.size(); ++a) y.plus_counts[a] = plus(index, a);
    return y;
  }

  std::size_t index(const LatticePoint& y) const {
    std::size_t i = 0;
    for (std::size_t a = 0; a < counts_.size(); ++a) {
      if (y.plus_counts[a] < 0 || y.plus_counts[a] > counts_[a])
        throw ValidationError("lattice: point outside the lattice");
      i += static_cast<std::size_t>(y.plus_counts[a]) * strides_[a];
    }
    return i;
  }

 private:
  std::vector<long> counts_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0, bandwidth_ = 0;
};

//! Direction l = 2a + s: s = 0 lowers plus_counts[a] ("+ to -"), s = 1 raises it.
inline std::size_t direction_type(std::size_t l) { return l / 2; }
inline bool direction_raises(std::size_t l) { return l % 2 == 1; }
inline std::size_t reverse_direction(std::size_t l) { return l ^ 1U; }

}  // namespace hopmeta
