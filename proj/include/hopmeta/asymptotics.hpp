#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "hopmeta/chain.hpp"
#include "hopmeta/errors.hpp"
#include "hopmeta/ldp.hpp"
#include "hopmeta/model.hpp"
#include "hopmeta/potential.hpp"

namespace hopmeta {

enum class PointKind { minimum, saddle, other };

inline const char* to_string(PointKind k) {
  switch (k) {
    case PointKind::minimum: return "minimum";
    case PointKind::saddle: return "saddle";
    default: return "other";
  }
}

struct CriticalPoint {
  Vec x;
  double value = kInf;
  Vec eigenvalues;   // of the Hessian of I, ascending
  Mat eigenvectors;
  double gradient_norm = kInf;
  PointKind kind = PointKind::other;
};

struct CriticalSearchOptions {
  int per_dim = 5;
  std::vector<Vec> seeds;
  double tolerance = 1e-10;
  int max_iter = 100;
  double margin = 1e-6;
};

namespace detail {

inline PointKind classify(const Vec& ev) {
  const double scale = ev.cwiseAbs().maxCoeff();
  const double thr = 1e-8 * std::max(scale, 1e-300);
  int neg = 0, pos = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -thr) ++neg;
    else if (ev[i] > thr) ++pos;
  }
  if (pos == ev.size()) return PointKind::minimum;
  if (neg == 1 && pos == ev.size() - 1) return PointKind::saddle;
  return PointKind::other;
}

}  // namespace detail

inline CriticalPoint make_critical_point(const RateModel& rm, const Vec& x) {
  RateValue f = rm.rate(x);
  if (!f.finite) throw ValidationError("critical point outside the feasible domain");
  CriticalPoint cp;
  cp.x = x;
  cp.value = f.value;
  cp.gradient_norm = f.gradient.norm();
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (f.hessian + f.hessian.transpose()));
  cp.eigenvalues = es.eigenvalues();
  cp.eigenvectors = es.eigenvectors();
  cp.kind = detail::classify(cp.eigenvalues);
  return cp;
}

//! Damped Newton on grad I = 0; the merit is |grad I| and iterates stay inside the domain.
inline std::optional<CriticalPoint> newton_critical(const RateModel& rm, Vec x, const CriticalSearchOptions& opt = {}) {
  if (!rm.feasible(x, opt.margin)) return std::nullopt;
  RateValue f = rm.rate(x);
  if (!f.finite) return std::nullopt;
  for (int it = 0; it < opt.max_iter && f.gradient.norm() > opt.tolerance; ++it) {
    Vec step = -f.hessian.fullPivLu().solve(f.gradient);
    if (!step.allFinite()) return std::nullopt;
    double alpha = 1.0;
    bool moved = false;
    for (int h = 0; h < 50; ++h, alpha *= 0.5) {
      Vec trial = x + alpha * step;
      if (!rm.feasible(trial, opt.margin)) continue;
      RateValue ft = rm.rate(trial);
      if (ft.finite && ft.gradient.norm() < f.gradient.norm()) {
        x = trial;
        f = std::move(ft);
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  if (!(f.gradient.norm() <= std::max(opt.tolerance, 1e-9))) return std::nullopt;
  return make_critical_point(rm, x);
}

/**
 * @brief Multistart Newton over a per_dim^p grid of the domain's bounding box
 * (points outside the domain skipped) plus user seeds; duplicates closer than 1e-6 merged.
 */
inline std::vector<CriticalPoint> find_critical_points(const RateModel& rm, const CriticalSearchOptions& opt = {}) {
  const auto p = static_cast<Eigen::Index>(rm.dim());
  const Vec half = rm.box();
  std::vector<Vec> starts = opt.seeds;
  std::vector<int> idx(static_cast<std::size_t>(p), 0);
  while (true) {
    Vec x(p);
    for (Eigen::Index j = 0; j < p; ++j)
      x[j] = half[j] * (-1.0 + (2.0 * idx[static_cast<std::size_t>(j)] + 1.0) / opt.per_dim);
    if (rm.feasible(x, opt.margin)) starts.push_back(x);
    Eigen::Index j = 0;
    while (j < p && ++idx[static_cast<std::size_t>(j)] == opt.per_dim) idx[static_cast<std::size_t>(j++)] = 0;
    if (j == p) break;
  }
  std::vector<CriticalPoint> found;
  for (const auto& s : starts) {
    auto cp = newton_critical(rm, s, opt);
    if (!cp) continue;
    bool dup = false;
    for (const auto& f : found)
      if ((f.x - cp->x).norm() <= 1e-6) dup = true;
    if (!dup) found.push_back(std::move(*cp));
  }
  if (std::none_of(found.begin(), found.end(), [](const auto& c) { return c.kind == PointKind::minimum; }))
    throw NumericalError("find_critical_points: no minimum found");
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
    return std::lexicographical_compare(a.x.begin(), a.x.end(), b.x.begin(), b.x.end());
  });
  return found;
}

//! The shallowest minimum; ties within 1e-9 go to the lexicographically smallest location.
inline std::size_t default_start_minimum(const std::vector<CriticalPoint>& cps) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (cps[i].kind != PointKind::minimum) continue;
    if (!best || cps[i].value > cps[*best].value + 1e-9) best = i;
  }
  if (!best) throw NumericalError("no local minimum available");
  return *best;
}

struct GateOptions {
  double grid_nodes = 1e5;
  double tie_tolerance = 1e-9;
  double gate_tolerance = 1e-8;
};

struct GateSet {
  CriticalPoint m;
  std::vector<CriticalPoint> M;
  double gate_value = kInf;
  double grid_gate_value = kInf;
  std::vector<CriticalPoint> Z;
  Vec grid_step;
};

namespace detail {

struct Grid {
  std::vector<std::size_t> K;
  Vec lo, h;
  std::vector<double> value;  // I per node, +inf outside the domain

  std::size_t size() const { return value.size(); }
  Vec point(std::size_t i) const {
    Vec x(lo.size());
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
      x[j] = lo[j] + (static_cast<double>(i % K[static_cast<std::size_t>(j)]) + 0.5) * h[j];
      i /= K[static_cast<std::size_t>(j)];
    }
    return x;
  }
  std::size_t nearest(const Vec& x) const {
    std::size_t i = 0, stride = 1;
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
      const auto kj = static_cast<long>(K[static_cast<std::size_t>(j)]);
      long c = std::lround((x[j] - lo[j]) / h[j] - 0.5);
      c = std::clamp(c, 0L, kj - 1);
      i += static_cast<std::size_t>(c) * stride;
      stride *= static_cast<std::size_t>(kj);
    }
    return i;
  }
  template <class F>
  void neighbors(std::size_t i, F&& f) const {
    std::size_t stride = 1, rest = i;
    for (std::size_t j = 0; j < K.size(); ++j) {
      const std::size_t c = rest % K[j];
      rest /= K[j];
      if (c > 0) f(i - stride);
      if (c + 1 < K[j]) f(i + stride);
      stride *= K[j];
    }
  }
};

inline Grid build_grid(const RateModel& rm, double nodes) {
  Grid g;
  const auto p = static_cast<Eigen::Index>(rm.dim());
  const Vec half = rm.box();
  const auto k = static_cast<std::size_t>(std::clamp(std::floor(std::pow(nodes, 1.0 / static_cast<double>(p))), 8.0, 2000.0));
  g.K.assign(static_cast<std::size_t>(p), k);
  g.lo = -half;
  g.h = 2.0 * half / static_cast<double>(k);
  std::size_t total = 1;
  for (auto kj : g.K) total *= kj;
  g.value.assign(total, kInf);
  for (std::size_t i = 0; i < total; ++i) {
    Vec x = g.point(i);
    if (rm.feasible(x, 1e-6)) g.value[i] = rm.rate_value(x);
  }
  return g;
}

// labels of the connected components of {value < level}
inline std::vector<int> components_below(const Grid& g, double level) {
  std::vector<int> label(g.size(), -1);
  int next = 0;
  for (std::size_t s = 0; s < g.size(); ++s) {
    if (label[s] >= 0 || !(g.value[s] < level)) continue;
    std::deque<std::size_t> queue{s};
    label[s] = next;
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      g.neighbors(i, [&](std::size_t j) {
        if (label[j] < 0 && g.value[j] < level) {
          label[j] = next;
          queue.push_back(j);
        }
      });
    }
    ++next;
  }
  return label;
}

}  // namespace detail

/**
 * @brief Minimax path from m to the deeper-or-equal minima on a regular grid, then
 * Newton polish of the path maximum. Z holds every index-1 saddle at the gate value
 * whose two descent sides fall into the sublevel components of m and of some M.
 */
inline GateSet find_gate(const std::vector<CriticalPoint>& cps, const RateModel& rm, std::size_t m_index,
                         const GateOptions& opt = {}) {
  if (m_index >= cps.size() || cps[m_index].kind != PointKind::minimum)
    throw ValidationError("find_gate: m must be a local minimum");
  GateSet gs;
  gs.m = cps[m_index];
  for (std::size_t i = 0; i < cps.size(); ++i)
    if (i != m_index && cps[i].kind == PointKind::minimum && cps[i].value <= gs.m.value + opt.tie_tolerance)
      gs.M.push_back(cps[i]);
  if (gs.M.empty()) throw AssumptionFailure("find_gate: m is a global minimum, no deeper minimum exists");

  detail::Grid grid = detail::build_grid(rm, opt.grid_nodes);
  gs.grid_step = grid.h;
  const std::size_t start = grid.nearest(gs.m.x);
  std::vector<char> target(grid.size(), 0);
  for (const auto& mm : gs.M) target[grid.nearest(mm.x)] = 1;
  if (!std::isfinite(grid.value[start])) throw NumericalError("find_gate: grid too coarse to resolve m");

  std::vector<double> key(grid.size(), kInf);
  std::vector<std::size_t> pred(grid.size(), static_cast<std::size_t>(-1));
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  key[start] = grid.value[start];
  pq.emplace(key[start], start);
  std::optional<std::size_t> reached;
  std::vector<char> done(grid.size(), 0);
  while (!pq.empty()) {
    auto [k, i] = pq.top();
    pq.pop();
    if (done[i]) continue;
    done[i] = 1;
    if (target[i]) {
      reached = i;
      break;
    }
    grid.neighbors(i, [&](std::size_t j) {
      if (done[j] || !std::isfinite(grid.value[j])) return;
      const double kj = std::max(k, grid.value[j]);
      if (kj < key[j]) {
        key[j] = kj;
        pred[j] = i;
        pq.emplace(kj, j);
      }
    });
  }
  if (!reached) throw AssumptionFailure("find_gate: no interior path from m to a deeper minimum");
  gs.grid_gate_value = key[*reached];
  std::size_t arg = *reached;
  for (std::size_t i = *reached; i != static_cast<std::size_t>(-1); i = pred[i])
    if (grid.value[i] > grid.value[arg]) arg = i;
  bool boundary = false;
  grid.neighbors(arg, [&](std::size_t j) { boundary |= !std::isfinite(grid.value[j]); });
  if (boundary) throw AssumptionFailure("find_gate: the gate touches the boundary of the domain");

  std::vector<CriticalPoint> candidates;
  for (const auto& c : cps)
    if (c.kind == PointKind::saddle) candidates.push_back(c);
  if (auto polished = newton_critical(rm, grid.point(arg)); polished && polished->kind == PointKind::saddle) {
    bool dup = false;
    for (const auto& c : candidates) dup |= (c.x - polished->x).norm() <= 1e-6;
    if (!dup) candidates.push_back(*polished);
  }
  // the gate is the lowest saddle separating m from M
  const double hmax = grid.h.maxCoeff();
  std::vector<CriticalPoint> separating;
  for (const auto& s : candidates) {
    if (s.value < gs.m.value) continue;
    const double curvature = std::abs(s.eigenvalues[0]);
    const double eta = 2.0 * curvature * hmax * hmax + 1e-12;
    const auto label = detail::components_below(grid, s.value - eta);
    const Vec u = s.eigenvectors.col(0);
    int side[2] = {-1, -1};
    for (int sign = 0; sign < 2; ++sign) {
      for (double delta = 2.0 * hmax; delta < 1.0; delta *= 1.5) {
        Vec probe = s.x + (sign ? -delta : delta) * u;
        if (!rm.feasible(probe, 1e-6)) break;
        const std::size_t node = grid.nearest(probe);
        if (label[node] >= 0 && rm.rate_value(probe) < s.value - 2.0 * eta) {
          side[sign] = label[node];
          break;
        }
      }
    }
    const int lm = label[start];
    bool to_m = side[0] == lm || side[1] == lm;
    bool to_M = false;
    for (const auto& mm : gs.M) {
      const int l = label[grid.nearest(mm.x)];
      to_M |= l >= 0 && l != lm && (side[0] == l || side[1] == l);
    }
    if (to_m && to_M) separating.push_back(s);
  }
  if (separating.empty()) throw NumericalError("find_gate: could not locate a saddle separating m from M");
  double best = kInf;
  for (const auto& s : separating) best = std::min(best, s.value);
  for (const auto& s : separating)
    if (s.value <= best + opt.gate_tolerance) {
      if (!rm.feasible(s.x, 1e-6)) throw AssumptionFailure("find_gate: the gate touches the boundary of the domain");
      gs.Z.push_back(s);
    }
  gs.gate_value = best;
  return gs;
}

// ---------------------------------------------------------------------------
// Lattice lifting, dice and eigen-data

/**
 * @brief Lattice point representing x: among points within one step of the continuous
 * maximum-entropy lift, those whose projection is nearest to x, then the heaviest.
 */
inline LatticePoint lattice_representative(const Vec& x, const LumpedMeasure& measure) {
  const TypeTable& table = measure.table();
  RateModel tilt(0.0, measure.potential(), table.types(), table.frequencies(), false);
  LegendreResult lg = tilt.legendre(x);
  if (!lg.finite) throw ValidationError("lattice_representative: point outside the feasible domain");
  const std::size_t A = table.size();
  std::vector<long> lo(A), hi(A);
  for (std::size_t a = 0; a < A; ++a) {
    double u = 0.0;
    for (std::size_t j = 0; j < table.dim(); ++j) u += lg.t[static_cast<Eigen::Index>(j)] * table.type(a)[j];
    const double k = static_cast<double>(table.count(a)) * (1.0 + std::tanh(u)) / 2.0;
    lo[a] = std::max(0L, static_cast<long>(std::floor(k)) - 1);
    hi[a] = std::min(table.count(a), static_cast<long>(std::ceil(k)) + 1);
  }
  std::optional<LatticePoint> best;
  double best_dist = kInf, best_w = -kInf;
  LatticePoint y{lo};
  while (true) {
    const double dist = (project(y, table) - x).norm();
    const double w = measure.lumped_log_weight(y);
    if (dist < best_dist - 1e-12 || (dist <= best_dist + 1e-12 && w > best_w)) {
      best = y;
      best_dist = std::min(dist, best_dist);
      best_w = w;
    }
    std::size_t a = 0;
    while (a < A && ++y.plus_counts[a] > hi[a]) {
      y.plus_counts[a] = lo[a];
      ++a;
    }
    if (a == A) break;
  }
  return *best;
}

//! All lattice points with exactly the same projection as y.
inline std::vector<LatticePoint> lattice_fiber(const LatticePoint& y, const LumpedMeasure& measure) {
  const Vec x = project(y, measure.table());
  std::vector<LatticePoint> out;
  const Lattice& lat = measure.lattice();
  for (std::size_t i = 0; i < lat.size(); ++i) {
    LatticePoint c = lat.point(i);
    if ((project(c, measure.table()) - x).norm() <= 1e-12) out.push_back(std::move(c));
  }
  return out;
}

struct EigenData {
  Vec gamma;  // L values: in-plane ascending, then the normal directions (0)
  Mat V;      // columns are eigenvectors in Y-space
  std::size_t in_plane = 0;
};

/**
 * @brief Eigen-decomposition of a Y-space Hessian inside the lattice plane
 * {Y_a^+ + Y_a^- = n_a/n}, completed by the normal directions with eigenvalue 0.
 */
inline EigenData canonical_eigen(const Mat& H, std::size_t types) {
  const auto A = static_cast<Eigen::Index>(types);
  Mat Q = Mat::Zero(2 * A, A), N = Mat::Zero(2 * A, A);
  const double r = 1.0 / std::numbers::sqrt2;
  for (Eigen::Index a = 0; a < A; ++a) {
    Q(2 * a, a) = r;
    Q(2 * a + 1, a) = -r;
    N(2 * a, a) = r;
    N(2 * a + 1, a) = r;
  }
  Mat Hq = Q.transpose() * H * Q;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (Hq + Hq.transpose()));
  EigenData e;
  e.in_plane = types;
  e.gamma = Vec::Zero(2 * A);
  e.gamma.head(A) = es.eigenvalues();
  e.V.resize(2 * A, 2 * A);
  e.V.leftCols(A) = Q * es.eigenvectors();
  e.V.rightCols(A) = N;
  // sign convention: largest-magnitude entry positive
  for (Eigen::Index i = 0; i < 2 * A; ++i) {
    Eigen::Index arg;
    e.V.col(i).cwiseAbs().maxCoeff(&arg);
    if (e.V(arg, i) < 0) e.V.col(i) *= -1.0;
  }
  return e;
}

//! Lattice step vectors in Y-space, one column per direction l (norm sqrt(2)/n).
inline Mat step_vectors(const TypeTable& table) {
  const auto A = static_cast<Eigen::Index>(table.size());
  const double n = static_cast<double>(table.n());
  Mat S = Mat::Zero(2 * A, 2 * A);
  for (Eigen::Index a = 0; a < A; ++a) {
    S(2 * a, 2 * a) = -1.0 / n;
    S(2 * a + 1, 2 * a) = 1.0 / n;
    S(2 * a, 2 * a + 1) = 1.0 / n;
    S(2 * a + 1, 2 * a + 1) = -1.0 / n;
  }
  return S;
}

/**
 * @brief Number of lattice points Y with |<Y - c, v_i>| <= half_width for every
 * eigenvector v_i (normal directions are automatically satisfied). With clip = false
 * the box 0 <= k <= n_a is ignored.
 */
inline std::size_t count_dice(const LatticePoint& center, const EigenData& eig, const TypeTable& table, double half_width,
                              bool clip = true) {
  const auto A = static_cast<Eigen::Index>(table.size());
  const double n = static_cast<double>(table.n());
  const Mat T = plane_map(table);
  const Mat P = eig.V.leftCols(A).transpose() * T;  // in-plane coordinates per unit change of k
  const long R = static_cast<long>(std::ceil(std::sqrt(static_cast<double>(A)) * half_width * n / std::numbers::sqrt2)) + 1;
  std::vector<long> d(static_cast<std::size_t>(A), -R);
  std::size_t count = 0;
  Vec dk(A);
  while (true) {
    bool inside = true;
    for (Eigen::Index a = 0; a < A; ++a) {
      const long k = center.plus_counts[static_cast<std::size_t>(a)] + d[static_cast<std::size_t>(a)];
      if (clip && (k < 0 || k > table.count(static_cast<std::size_t>(a)))) inside = false;
      dk[a] = static_cast<double>(d[static_cast<std::size_t>(a)]);
    }
    if (inside && ((P * dk).cwiseAbs().array() <= half_width * (1.0 + 1e-12)).all()) ++count;
    Eigen::Index a = 0;
    while (a < A && ++d[static_cast<std::size_t>(a)] > R) d[static_cast<std::size_t>(a++)] = -R;
    if (a == A) break;
  }
  return count;
}

enum class StepNorm { step, unit };
enum class GateDirection { w, v1 };

inline const char* to_string(HessianMode m) { return m == HessianMode::paper ? "paper" : "exact"; }
inline const char* to_string(StepNorm s) { return s == StepNorm::step ? "step" : "unit"; }
inline const char* to_string(GateDirection d) { return d == GateDirection::w ? "w" : "v1"; }

//! Saddle quantities for one normalization of the step vectors e_l.
struct NormalizedSaddle {
  double lambda = 0.0;
  Vec w_hat;
  Vec w;
  std::vector<std::size_t> Gamma;
  double log_gamma_product = 0.0;  // log |prod_{i in Gamma} (gamma_i + 2|lambda| <w,v_i>^2)|
  bool degenerate = false;
  double w_hessian = 0.0;          // <w, H w>
  double log_dir_w = 0.0;          // log sum_l r_l <e_l, w>^2
  double log_dir_v1 = 0.0;         // log sum_l r_l <e_l, v_1>^2
};

struct SaddleData {
  LatticePoint point;
  std::size_t index = 0;  // lattice index
  Vec y;                  // Y-space coordinates
  Vec x;                  // projection
  HessianMode mode = HessianMode::exact;
  EigenData eig;
  Vec rates;              // r_l at the lattice point
  double log_q = 0.0;     // normalized lumped log weight
  double log_kappa = 0.0;
  std::size_t dice = 0;
  NormalizedSaddle step, unit;

  const NormalizedSaddle& norm(StepNorm s) const { return s == StepNorm::step ? step : unit; }
};

struct MinimumData {
  LatticePoint point;
  std::size_t index = 0;
  Vec y, x;
  HessianMode mode = HessianMode::exact;
  EigenData eig;
  std::vector<std::size_t> Gamma;
  double log_gamma_product = 0.0;
  double log_q = 0.0;
  double log_kappa = 0.0;
  std::size_t dice = 0;
  std::size_t dice_unclipped = 0;  // same dice without the box constraint
};

namespace detail {

inline std::vector<std::size_t> nonzero(const Vec& values, double& log_abs_product, bool& degenerate) {
  const double scale = values.cwiseAbs().maxCoeff();
  const double thr = 1e-8 * scale;
  std::vector<std::size_t> idx;
  log_abs_product = 0.0;
  degenerate = false;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double a = std::abs(values[i]);
    if (a > thr) {
      idx.push_back(static_cast<std::size_t>(i));
      log_abs_product += std::log(a);
      degenerate |= a < 1e-6 * scale;
    }
  }
  return idx;
}

inline NormalizedSaddle normalized_saddle(const Mat& H, const EigenData& eig, const Mat& E, const Vec& r,
                                          const Vec& orientation) {
  NormalizedSaddle s;
  const Eigen::Index L = E.cols();
  Mat B(E.rows(), L);
  for (Eigen::Index l = 0; l < L; ++l) B.col(l) = std::sqrt(r[l]) * E.col(l);
  Mat Mq = B.transpose() * H * B;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (Mq + Mq.transpose()));
  s.lambda = es.eigenvalues()[0];
  s.w_hat = es.eigenvectors().col(0);
  Vec target(L);
  for (Eigen::Index l = 0; l < L; ++l) target[l] = s.w_hat[l] / std::sqrt(r[l]);
  s.w = E.transpose().completeOrthogonalDecomposition().solve(target);
  if (s.w.dot(orientation) < 0.0) {
    s.w = -s.w;
    s.w_hat = -s.w_hat;
  }
  s.w_hessian = s.w.dot(H * s.w);
  Vec tau(eig.gamma.size());
  for (Eigen::Index i = 0; i < tau.size(); ++i) {
    const double c = s.w.dot(eig.V.col(i));
    tau[i] = eig.gamma[i] + 2.0 * std::abs(s.lambda) * c * c;
  }
  s.Gamma = nonzero(tau, s.log_gamma_product, s.degenerate);
  double dw = 0.0, dv = 0.0;
  for (Eigen::Index l = 0; l < L; ++l) {
    const double a = E.col(l).dot(s.w), b = E.col(l).dot(eig.V.col(0));
    dw += r[l] * a * a;
    dv += r[l] * b * b;
  }
  s.log_dir_w = std::log(dw);
  s.log_dir_v1 = std::log(dv);
  return s;
}

}  // namespace detail

/**
 * @brief Eigen-data at a lattice saddle representative.
 *
 * toward: a Y-space point on the side of m; w is oriented to point at it.
 */
inline SaddleData saddle_eigendata(const LatticePoint& z, const LatticeChain& chain, const RateModel& rm,
                                   HessianMode mode, const Vec& toward) {
  const LumpedMeasure& measure = chain.measure();
  const TypeTable& table = measure.table();
  SaddleData d;
  d.point = z;
  d.index = chain.lattice().index(z);
  d.mode = mode;
  const Vec k = plus_counts_vec(z);
  d.y = y_coordinates(k, table);
  d.x = project(z, table);
  const Mat H = rate_hat_and_hessian(k, rm, measure, mode).hessian;
  d.eig = canonical_eigen(H, table.size());
  d.rates.resize(static_cast<Eigen::Index>(chain.directions()));
  for (std::size_t l = 0; l < chain.directions(); ++l) {
    d.rates[static_cast<Eigen::Index>(l)] = chain.rate(d.index, l);
    if (!(d.rates[static_cast<Eigen::Index>(l)] > 0.0))
      throw AssumptionFailure("saddle_eigendata: a transition rate vanishes at the saddle (boundary saddle)");
  }
  d.log_q = measure.log_q(d.index);
  d.log_kappa = log_kappa_hat(z, rm, measure);
  const double n = static_cast<double>(table.n());
  d.dice = count_dice(z, d.eig, table, 1.0 / std::sqrt(n));
  const Mat S = step_vectors(table);
  const Vec orient = toward - d.y;
  d.step = detail::normalized_saddle(H, d.eig, S, d.rates, orient);
  d.unit = detail::normalized_saddle(H, d.eig, S * (n / std::numbers::sqrt2), d.rates, orient);
  if (!(d.step.lambda < 0.0)) throw NumericalError("saddle_eigendata: no negative eigenvalue, not a dynamical saddle");
  return d;
}

inline MinimumData minimum_data(const LatticePoint& m, const LatticeChain& chain, const RateModel& rm, HessianMode mode) {
  const LumpedMeasure& measure = chain.measure();
  const TypeTable& table = measure.table();
  MinimumData d;
  d.point = m;
  d.index = chain.lattice().index(m);
  d.mode = mode;
  const Vec k = plus_counts_vec(m);
  d.y = y_coordinates(k, table);
  d.x = project(m, table);
  d.eig = canonical_eigen(rate_hat_and_hessian(k, rm, measure, mode).hessian, table.size());
  bool degenerate = false;
  d.Gamma = detail::nonzero(d.eig.gamma, d.log_gamma_product, degenerate);
  d.log_q = measure.log_q(d.index);
  d.log_kappa = log_kappa_hat(m, rm, measure);
  d.dice = count_dice(m, d.eig, table, 1.0 / std::sqrt(static_cast<double>(table.n())));
  d.dice_unclipped = count_dice(m, d.eig, table, 1.0 / std::sqrt(static_cast<double>(table.n())), false);
  return d;
}

//! Phi_N(sqrt(n |lambda|) <Y - z, w>).
inline double g_function(const Vec& y, const Vec& z, double lambda, const Vec& w, long n) {
  const double u = std::sqrt(static_cast<double>(n) * std::abs(lambda)) * (y - z).dot(w);
  return 0.5 * std::erfc(-u / std::numbers::sqrt2);
}

struct FormulaVariant {
  StepNorm norm = StepNorm::step;
  GateDirection direction = GateDirection::w;
};

//! log of one saddle's term without the Q(z) |D| factor.
inline double log_saddle_factor(const SaddleData& s, const FormulaVariant& v) {
  const NormalizedSaddle& ns = s.norm(v.norm);
  if (ns.degenerate) return std::numeric_limits<double>::quiet_NaN();
  return 0.5 * static_cast<double>(ns.Gamma.size()) * std::log(std::numbers::pi / 2.0) + std::log(std::abs(ns.lambda)) -
         0.5 * ns.log_gamma_product + (v.direction == GateDirection::w ? ns.log_dir_w : ns.log_dir_v1);
}

/**
 * @brief log of (n/4pi) sum_k Q(z_k) |D_k| (pi/2)^{|Gamma_k|/2} |lambda_k|
 * |prod (gamma + 2|lambda|<w,v>^2)|^{-1/2} sum_l r_l <e_l, dir>^2. NaN when degenerate.
 */
inline double capacity_upper_bound(const std::vector<SaddleData>& saddles, long n, const FormulaVariant& v = {}) {
  std::vector<double> terms;
  for (const auto& s : saddles) {
    const double f = log_saddle_factor(s, v);
    if (std::isnan(f)) return f;
    terms.push_back(s.log_q + std::log(static_cast<double>(s.dice)) + f);
  }
  return std::log(static_cast<double>(n) / (4.0 * std::numbers::pi)) + log_sum_exp(terms);
}

inline double capacity_asymptotic(const std::vector<SaddleData>& saddles, long n, const FormulaVariant& v = {}) {
  return capacity_upper_bound(saddles, n, v);
}

struct Prefactor {
  double log_cn = 0.0;
  double log_prediction = 0.0;       // log c(n) + n (I(z) - I(m))
  double log_valley_asymptotic = 0.0;
  double log_valley_unclipped = 0.0;  // with the box-free dice count at the minimum
};

inline Prefactor prefactor_cn(const MinimumData& m, const std::vector<SaddleData>& saddles, long n, double barrier,
                              const FormulaVariant& v = {}) {
  Prefactor p;
  std::vector<double> terms;
  for (const auto& s : saddles) terms.push_back(s.log_kappa + log_saddle_factor(s, v));
  const double half_log = 0.5 * std::log(std::numbers::pi / 2.0);
  const double nd = static_cast<double>(n);
  p.log_cn = std::log(4.0 * std::numbers::pi / nd) + static_cast<double>(m.Gamma.size()) * half_log -
             0.5 * m.log_gamma_product + m.log_kappa - log_sum_exp(terms);
  p.log_prediction = p.log_cn + nd * barrier;
  const double gauss = static_cast<double>(m.Gamma.size()) * half_log - 0.5 * m.log_gamma_product;
  p.log_valley_asymptotic = m.log_q + std::log(static_cast<double>(m.dice)) + gauss;
  p.log_valley_unclipped = m.log_q + std::log(static_cast<double>(m.dice_unclipped)) + gauss;
  return p;
}

// ---------------------------------------------------------------------------
// Maximum principle bound and the harmonic-approximation diagnostic

//! Undirected weighted graph in CSR form (both directions stored).
struct WeightedGraph {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> targets;
  std::vector<double> weights;
  std::size_t size() const { return offsets.size() - 1; }
};

struct MaxPrincipleParams {
  std::optional<double> C, delta, epsilon, theta;
};

struct MaxPrincipleVerdict {
  double max_abs = 0.0;
  double bound = 0.0;
  double C = 0.0, delta = 0.0, epsilon = 0.0, theta = 0.0;
  bool holds = false;
};

/**
 * @brief Checks max|F| <= epsilon + C delta / theta on a graph B with marked subset B0.
 *
 * Unset parameters are computed: epsilon = max_{B0}|F|, delta = max_{B \ B0}|Delta F|
 * with Delta F(x) = sum_y w(x,y)(F(y) - F(x)), theta = min weight, C = graph diameter.
 */
inline MaxPrincipleVerdict max_principle_check(const std::vector<double>& F, const WeightedGraph& g, const std::vector<char>& in_b0,
                                    const MaxPrincipleParams& params = {}) {
  const std::size_t N = g.size();
  if (F.size() != N || in_b0.size() != N) throw ValidationError("max_principle_check: sizes differ");
  std::vector<int> comp(N, -1);
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t s = 0; s < N; ++s) {
    if (comp[s] >= 0) continue;
    const int c = static_cast<int>(members.size());
    members.emplace_back();
    std::deque<std::size_t> queue{s};
    comp[s] = c;
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      members.back().push_back(i);
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
        if (comp[g.targets[e]] < 0) {
          comp[g.targets[e]] = c;
          queue.push_back(g.targets[e]);
        }
    }
  }
  for (const auto& mem : members)
    if (std::none_of(mem.begin(), mem.end(), [&](auto i) { return in_b0[i] != 0; }))
      throw ValidationError("max_principle_check: a connected component of B does not meet B0");
  MaxPrincipleVerdict v;
  double theta = kInf;
  for (double w : g.weights) theta = std::min(theta, w);
  v.theta = params.theta.value_or(theta);
  if (!(v.theta > 0.0) || theta < v.theta) throw ValidationError("max_principle_check: weights must be bounded below by theta > 0");
  double eps = 0.0, delta = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    v.max_abs = std::max(v.max_abs, std::abs(F[i]));
    if (in_b0[i]) {
      eps = std::max(eps, std::abs(F[i]));
      continue;
    }
    double lap = 0.0;
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) lap += g.weights[e] * (F[g.targets[e]] - F[i]);
    delta = std::max(delta, std::abs(lap));
  }
  v.epsilon = params.epsilon.value_or(eps);
  v.delta = params.delta.value_or(delta);
  if (params.C) {
    v.C = *params.C;
  } else {
    double diam = 0.0;
    std::vector<long> dist(N);
    for (std::size_t s = 0; s < N; ++s) {
      std::fill(dist.begin(), dist.end(), -1L);
      std::deque<std::size_t> queue{s};
      dist[s] = 0;
      while (!queue.empty()) {
        const std::size_t i = queue.front();
        queue.pop_front();
        diam = std::max(diam, static_cast<double>(dist[i]));
        for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
          if (dist[g.targets[e]] < 0) {
            dist[g.targets[e]] = dist[i] + 1;
            queue.push_back(g.targets[e]);
          }
      }
    }
    v.C = diam;
  }
  v.bound = v.epsilon + v.C * v.delta / v.theta;
  v.holds = v.max_abs <= v.bound * (1.0 + 1e-12) + 1e-300;
  return v;
}

struct HarmonicDiagnostic {
  std::size_t points = 0;        // lattice points of the enlarged dice
  std::size_t inner_points = 0;  // points of the dice proper
  double max_diff = 0.0;         // max over the dice of |g - Phi_local|
  double max_diff_global = std::numeric_limits<double>::quiet_NaN();  // against the lattice equilibrium potential
  MaxPrincipleVerdict check;
};

/**
 * @brief Compares g with the equilibrium potential of the quadratic model chain on the
 * enlarged dice around the saddle (half-width n^{-1/2+eta}): weights
 * Q(z) exp(-(n/2) <Y-z, H (Y-z)>), rates frozen at their saddle values, boundary values
 * 1 on the m side and 0 on the other side.
 */
inline HarmonicDiagnostic harmonic_diagnostic(const SaddleData& s, const LatticeChain& chain, double eta = 0.25,
                                              const HarmonicSolution* global = nullptr) {
  const TypeTable& table = chain.table();
  const auto A = static_cast<Eigen::Index>(table.size());
  const double n = static_cast<double>(table.n());
  const double outer = std::pow(n, -0.5 + eta), inner = 1.0 / std::sqrt(n);
  const Mat T = plane_map(table);
  const Mat P = s.eig.V.leftCols(A).transpose() * T;
  const Mat H = s.eig.V * s.eig.gamma.asDiagonal() * s.eig.V.transpose();
  const long R = static_cast<long>(std::ceil(std::sqrt(static_cast<double>(A)) * outer * n / std::numbers::sqrt2)) + 1;
  const NormalizedSaddle& ns = s.step;

  std::vector<long> d(static_cast<std::size_t>(A), -R);
  std::vector<std::vector<long>> pts;
  std::map<std::vector<long>, std::size_t> where;
  Vec dk(A);
  while (true) {
    bool inside = true;
    for (Eigen::Index a = 0; a < A; ++a) {
      const long k = s.point.plus_counts[static_cast<std::size_t>(a)] + d[static_cast<std::size_t>(a)];
      if (k < 0 || k > table.count(static_cast<std::size_t>(a))) inside = false;
      dk[a] = static_cast<double>(d[static_cast<std::size_t>(a)]);
    }
    if (inside && ((P * dk).cwiseAbs().array() <= outer * (1.0 + 1e-12)).all()) {
      where[d] = pts.size();
      pts.push_back(d);
    }
    Eigen::Index a = 0;
    while (a < A && ++d[static_cast<std::size_t>(a)] > R) d[static_cast<std::size_t>(a++)] = -R;
    if (a == A) break;
  }
  const std::size_t N = pts.size();
  std::vector<Vec> dy(N);
  std::vector<double> logw(N), g(N), proj(N);
  std::vector<char> is_inner(N, 0), boundary(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    for (Eigen::Index a = 0; a < A; ++a) dk[a] = static_cast<double>(pts[i][static_cast<std::size_t>(a)]);
    dy[i] = T * dk;
    logw[i] = -0.5 * n * dy[i].dot(H * dy[i]);
    proj[i] = dy[i].dot(ns.w);
    g[i] = g_function(s.y + dy[i], s.y, ns.lambda, ns.w, table.n());
    is_inner[i] = ((P * dk).cwiseAbs().array() <= inner * (1.0 + 1e-12)).all();
  }
  ConductanceGraph cg;
  WeightedGraph wg;
  cg.log_weight = logw;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t l = 0; l < 2 * table.size(); ++l) {
      auto nb = pts[i];
      const std::size_t a = direction_type(l);
      nb[a] += direction_raises(l) ? 1 : -1;
      auto it = where.find(nb);
      if (it == where.end()) {
        const long k = s.point.plus_counts[a] + nb[a];
        if (k >= 0 && k <= table.count(a)) boundary[i] = 1;
        continue;
      }
      const double lr = 0.5 * (std::log(s.rates[static_cast<Eigen::Index>(l)]) +
                               std::log(s.rates[static_cast<Eigen::Index>(reverse_direction(l))]));
      const double lc = 0.5 * (logw[i] + logw[it->second]) + lr;
      cg.targets.push_back(it->second);
      cg.log_c.push_back(lc);
      wg.targets.push_back(it->second);
      wg.weights.push_back(std::exp(lc));
    }
    cg.offsets.push_back(cg.targets.size());
    wg.offsets.push_back(wg.targets.size());
  }
  std::vector<std::size_t> Aset, Bset;
  for (std::size_t i = 0; i < N; ++i)
    if (boundary[i]) {
      if (proj[i] > 0.0) Aset.push_back(i);
      else if (proj[i] < 0.0) Bset.push_back(i);
    }
  SolverOptions so;
  so.prune = false;
  HarmonicSolution local = solve_harmonic(cg, Aset, Bset, so);
  HarmonicDiagnostic r;
  r.points = N;
  std::vector<double> F(N);
  std::vector<char> b0(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    F[i] = g[i] - local.phi[i];
    b0[i] = boundary[i];
    if (is_inner[i]) {
      ++r.inner_points;
      r.max_diff = std::max(r.max_diff, std::abs(F[i]));
    }
  }
  // normalize weights so theta is O(1)-scaled; the bound is scale invariant
  double wmax = 0.0;
  for (double w : wg.weights) wmax = std::max(wmax, w);
  for (double& w : wg.weights) w /= wmax;
  r.check = max_principle_check(F, wg, b0);
  if (global) {
    r.max_diff_global = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      if (!is_inner[i]) continue;
      LatticePoint y = s.point;
      for (std::size_t a = 0; a < table.size(); ++a) y.plus_counts[a] += pts[i][a];
      const std::size_t idx = chain.lattice().index(y);
      r.max_diff_global = std::max(r.max_diff_global, std::abs(g[i] - global->phi[idx]));
    }
  }
  return r;
}

/**
 * @brief Test function for the variational principle: g on the enlarged dice of each
 * saddle, and outside the dice the rounded equilibrium potential.
 */
inline std::vector<double> test_function(const std::vector<SaddleData>& saddles, const LatticeChain& chain,
                                         const HarmonicSolution& outside, double eta = 0.25) {
  const TypeTable& table = chain.table();
  const auto A = static_cast<Eigen::Index>(table.size());
  const double outer = std::pow(static_cast<double>(table.n()), -0.5 + eta);
  std::vector<double> f(chain.size(), 0.0);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const Vec y = y_coordinates(plus_counts_vec(chain.lattice().point(i)), table);
    f[i] = outside.phi[i] >= 0.5 ? 1.0 : 0.0;
    if (outside.phi[i] == 1.0 || outside.phi[i] == 0.0) continue;  // boundary sets keep their values
    for (const auto& s : saddles) {
      const Vec c = s.eig.V.leftCols(A).transpose() * (y - s.y);
      if ((c.cwiseAbs().array() <= outer).all()) {
        f[i] = g_function(y, s.y, s.step.lambda, s.step.w, table.n());
        break;
      }
    }
  }
  return f;
}

}  // namespace hopmeta
