#pragma once

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "hopmeta/asymptotics.hpp"
#include "hopmeta/chain.hpp"
#include "hopmeta/disorder.hpp"
#include "hopmeta/errors.hpp"
#include "hopmeta/ldp.hpp"
#include "hopmeta/mc.hpp"
#include "hopmeta/model.hpp"
#include "hopmeta/oracle.hpp"
#include "hopmeta/potential.hpp"

namespace hopmeta {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kCacheEnv = "HOPMETA_CACHE_DIR";

using json = nlohmann::json;

inline void log_line(const std::string& msg) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[hopmeta] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Configuration

struct DisorderConfig {
  std::vector<PatternDistribution> patterns;  // empty when types are given
  std::string realization = "expected";       // expected | sampled
  std::uint64_t seed = 1;
  std::vector<std::vector<double>> types;
  std::vector<double> fractions;
};

struct PotentialConfig {
  std::string kind = "hopfield";  // hopfield | random_field | polynomial
  double h = 1.0;
  std::vector<Monomial> terms;
};

struct ModeConfig {
  HessianMode hessian = HessianMode::exact;
  StepNorm norm = StepNorm::step;
  GateDirection direction = GateDirection::w;
};

struct McConfig {
  std::size_t trajectories = 0;
  std::uint64_t seed = 1;
  std::uint64_t max_steps = 100'000'000;
  double step_budget = 5e10;
  std::size_t batches = 20;
};

struct ExperimentConfig {
  std::string source = "<inline>";
  DisorderConfig disorder;
  PotentialConfig potential;
  double beta = 1.0;
  std::vector<long> n{100};
  ModeConfig mode;
  SolverOptions solver;
  CriticalSearchOptions critical;
  GateOptions gate;
  std::optional<std::vector<double>> start;  // location of the starting minimum
  std::vector<LatticePoint> set_a, set_b;      // explicit boundary sets (plus counts)
  McConfig mc;
  bool harmonic_diagnostic = false;
  double eta = 0.25;
  std::string out_dir = "out";
  std::string cache_dir;
  bool cache = true;
  std::size_t workers = 0;
};

inline HessianMode parse_hessian_mode(const std::string& s) {
  if (s == "paper") return HessianMode::paper;
  if (s == "exact") return HessianMode::exact;
  throw ValidationError("mode must be paper or exact, got '" + s + "'");
}

inline StepNorm parse_step_norm(const std::string& s) {
  if (s == "step") return StepNorm::step;
  if (s == "unit") return StepNorm::unit;
  throw ValidationError("el-norm must be step or unit, got '" + s + "'");
}

inline GateDirection parse_gate_direction(const std::string& s) {
  if (s == "w") return GateDirection::w;
  if (s == "v1") return GateDirection::v1;
  throw ValidationError("gate-dir must be w or v1, got '" + s + "'");
}

namespace detail {

inline void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
  if (!node.IsMap()) throw ValidationError(where + ": expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get(const YAML::Node& node, const std::string& where) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ValidationError(where + ": malformed value");
  }
}

inline LatticePoint parse_point(const YAML::Node& node, const std::string& where) {
  return LatticePoint{get<std::vector<long>>(node, where)};
}

}  // namespace detail

inline ExperimentConfig parse_config(const YAML::Node& root, const std::string& source = "<inline>") {
  using detail::check_keys;
  using detail::get;
  ExperimentConfig c;
  c.source = source;
  const std::string top = source;
  if (!root || root.IsNull()) throw ValidationError(top + ": empty configuration");
  check_keys(root, {"disorder", "potential", "beta", "n", "mode", "solver", "critical", "gate", "start", "sets", "mc",
                    "diagnostics", "output", "workers"},
             top);

  if (!root["disorder"]) throw ValidationError(top + ": missing key 'disorder'");
  {
    const auto d = root["disorder"];
    const std::string w = top + ": disorder";
    check_keys(d, {"patterns", "realization", "seed", "types", "fractions"}, w);
    if (d["patterns"] && d["types"]) throw ValidationError(w + ": give either patterns or types, not both");
    if (d["patterns"]) {
      std::size_t j = 0;
      for (const auto& p : d["patterns"]) {
        const std::string pw = w + ".patterns[" + std::to_string(j++) + "]";
        check_keys(p, {"support", "probabilities"}, pw);
        auto s = get<std::vector<double>>(p["support"], pw + ".support");
        std::vector<double> q;
        if (p["probabilities"])
          q = get<std::vector<double>>(p["probabilities"], pw + ".probabilities");
        else
          q.assign(s.size(), 1.0 / static_cast<double>(s.size()));
        try {
          c.disorder.patterns.emplace_back(std::move(s), std::move(q));
        } catch (const ValidationError& e) {
          throw ValidationError(pw + ": " + e.what());
        }
      }
      if (c.disorder.patterns.empty()) throw ValidationError(w + ".patterns: at least one pattern is required");
    } else if (d["types"]) {
      c.disorder.types = get<std::vector<std::vector<double>>>(d["types"], w + ".types");
      if (!d["fractions"]) throw ValidationError(w + ": types need fractions");
      c.disorder.fractions = get<std::vector<double>>(d["fractions"], w + ".fractions");
      if (c.disorder.types.empty() || c.disorder.types.size() != c.disorder.fractions.size())
        throw ValidationError(w + ": types and fractions must be non-empty and of equal length");
      double total = 0.0;
      for (double f : c.disorder.fractions) {
        if (!(f > 0.0)) throw ValidationError(w + ".fractions: entries must be positive");
        total += f;
      }
      if (std::abs(total - 1.0) > 1e-9) throw ValidationError(w + ".fractions: must sum to 1");
    } else {
      throw ValidationError(w + ": one of patterns or types is required");
    }
    if (d["realization"]) {
      c.disorder.realization = get<std::string>(d["realization"], w + ".realization");
      if (c.disorder.realization != "expected" && c.disorder.realization != "sampled")
        throw ValidationError(w + ".realization: must be expected or sampled");
    }
    if (d["seed"]) c.disorder.seed = get<std::uint64_t>(d["seed"], w + ".seed");
  }

  if (const auto p = root["potential"]) {
    const std::string w = top + ": potential";
    check_keys(p, {"kind", "h", "terms"}, w);
    if (p["kind"]) c.potential.kind = get<std::string>(p["kind"], w + ".kind");
    if (p["h"]) c.potential.h = get<double>(p["h"], w + ".h");
    if (c.potential.kind == "polynomial") {
      if (!p["terms"]) throw ValidationError(w + ": polynomial needs terms");
      std::size_t k = 0;
      for (const auto& t : p["terms"]) {
        const std::string tw = w + ".terms[" + std::to_string(k++) + "]";
        check_keys(t, {"coef", "powers"}, tw);
        c.potential.terms.push_back({get<double>(t["coef"], tw + ".coef"), get<std::vector<int>>(t["powers"], tw + ".powers")});
      }
    } else if (c.potential.kind != "hopfield" && c.potential.kind != "random_field") {
      throw ValidationError(w + ".kind: must be hopfield, random_field or polynomial");
    } else if (p["terms"]) {
      throw ValidationError(w + ": terms are only allowed for kind polynomial");
    }
  }

  if (root["beta"]) c.beta = get<double>(root["beta"], top + ": beta");
  if (!(c.beta >= 0.0) || !std::isfinite(c.beta)) throw ValidationError(top + ": beta must be finite and >= 0");
  if (const auto n = root["n"]) {
    c.n = n.IsSequence() ? get<std::vector<long>>(n, top + ": n") : std::vector<long>{get<long>(n, top + ": n")};
    if (c.n.empty()) throw ValidationError(top + ": n must not be empty");
    for (long v : c.n)
      if (v < 2) throw ValidationError(top + ": n must be >= 2");
  }

  if (const auto m = root["mode"]) {
    const std::string w = top + ": mode";
    check_keys(m, {"hessian", "el_norm", "gate_dir", "prune"}, w);
    try {
      if (m["hessian"]) c.mode.hessian = parse_hessian_mode(get<std::string>(m["hessian"], w + ".hessian"));
      if (m["el_norm"]) c.mode.norm = parse_step_norm(get<std::string>(m["el_norm"], w + ".el_norm"));
      if (m["gate_dir"]) c.mode.direction = parse_gate_direction(get<std::string>(m["gate_dir"], w + ".gate_dir"));
    } catch (const ValidationError& e) {
      throw ValidationError(w + ": " + e.what());
    }
    if (m["prune"]) c.solver.prune = get<bool>(m["prune"], w + ".prune");
  }
  if (const auto s = root["solver"]) {
    const std::string w = top + ": solver";
    check_keys(s, {"cg_tolerance", "prune_log10", "force_cg", "band_work_budget", "band_memory_budget"}, w);
    if (s["cg_tolerance"]) c.solver.cg_tolerance = get<double>(s["cg_tolerance"], w + ".cg_tolerance");
    if (s["prune_log10"]) c.solver.prune_log10 = get<double>(s["prune_log10"], w + ".prune_log10");
    if (s["force_cg"]) c.solver.force_cg = get<bool>(s["force_cg"], w + ".force_cg");
    if (s["band_work_budget"]) c.solver.band_work_budget = get<double>(s["band_work_budget"], w + ".band_work_budget");
    if (s["band_memory_budget"])
      c.solver.band_memory_budget = get<double>(s["band_memory_budget"], w + ".band_memory_budget");
    if (!(c.solver.cg_tolerance > 0.0)) throw ValidationError(w + ".cg_tolerance: must be positive");
  }
  if (const auto s = root["critical"]) {
    const std::string w = top + ": critical";
    check_keys(s, {"per_dim", "tolerance"}, w);
    if (s["per_dim"]) c.critical.per_dim = get<int>(s["per_dim"], w + ".per_dim");
    if (s["tolerance"]) c.critical.tolerance = get<double>(s["tolerance"], w + ".tolerance");
  }
  if (const auto s = root["gate"]) {
    const std::string w = top + ": gate";
    check_keys(s, {"grid_nodes", "tie_tolerance"}, w);
    if (s["grid_nodes"]) c.gate.grid_nodes = get<double>(s["grid_nodes"], w + ".grid_nodes");
    if (s["tie_tolerance"]) c.gate.tie_tolerance = get<double>(s["tie_tolerance"], w + ".tie_tolerance");
  }
  if (root["start"]) c.start = get<std::vector<double>>(root["start"], top + ": start");
  if (const auto s = root["sets"]) {
    const std::string w = top + ": sets";
    check_keys(s, {"A", "B"}, w);
    if (!s["A"] || !s["B"]) throw ValidationError(w + ": both A and B are required");
    for (const auto& p : s["A"]) c.set_a.push_back(detail::parse_point(p, w + ".A"));
    for (const auto& p : s["B"]) c.set_b.push_back(detail::parse_point(p, w + ".B"));
  }
  if (const auto s = root["mc"]) {
    const std::string w = top + ": mc";
    check_keys(s, {"trajectories", "seed", "max_steps", "step_budget", "batches"}, w);
    if (s["trajectories"]) c.mc.trajectories = get<std::size_t>(s["trajectories"], w + ".trajectories");
    if (s["seed"]) c.mc.seed = get<std::uint64_t>(s["seed"], w + ".seed");
    if (s["max_steps"]) c.mc.max_steps = get<std::uint64_t>(s["max_steps"], w + ".max_steps");
    if (s["step_budget"]) c.mc.step_budget = get<double>(s["step_budget"], w + ".step_budget");
    if (s["batches"]) c.mc.batches = get<std::size_t>(s["batches"], w + ".batches");
  }
  if (const auto s = root["diagnostics"]) {
    const std::string w = top + ": diagnostics";
    check_keys(s, {"harmonic", "eta"}, w);
    if (s["harmonic"]) c.harmonic_diagnostic = get<bool>(s["harmonic"], w + ".harmonic");
    if (s["eta"]) c.eta = get<double>(s["eta"], w + ".eta");
  }
  if (const auto s = root["output"]) {
    const std::string w = top + ": output";
    check_keys(s, {"dir", "cache", "cache_dir"}, w);
    if (s["dir"]) c.out_dir = get<std::string>(s["dir"], w + ".dir");
    if (s["cache"]) c.cache = get<bool>(s["cache"], w + ".cache");
    if (s["cache_dir"]) c.cache_dir = get<std::string>(s["cache_dir"], w + ".cache_dir");
  }
  if (root["workers"]) c.workers = get<std::size_t>(root["workers"], top + ": workers");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ValidationError(path + ": cannot read file");
  } catch (const YAML::Exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return parse_config(root, path);
}

inline std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline json to_json(const ExperimentConfig& c) {
  json j;
  json d;
  if (!c.disorder.patterns.empty()) {
    for (const auto& p : c.disorder.patterns) d["patterns"].push_back({{"support", p.support()}, {"probabilities", p.probabilities()}});
    d["realization"] = c.disorder.realization;
    d["seed"] = c.disorder.seed;
  } else {
    d["types"] = c.disorder.types;
    d["fractions"] = c.disorder.fractions;
  }
  j["disorder"] = d;
  json p{{"kind", c.potential.kind}};
  if (c.potential.kind == "random_field") p["h"] = c.potential.h;
  for (const auto& t : c.potential.terms) p["terms"].push_back({{"coef", t.coef}, {"powers", t.powers}});
  j["potential"] = p;
  j["beta"] = c.beta;
  j["n"] = c.n;
  j["mode"] = {{"hessian", to_string(c.mode.hessian)},
               {"el_norm", to_string(c.mode.norm)},
               {"gate_dir", to_string(c.mode.direction)},
               {"prune", c.solver.prune}};
  j["solver"] = {{"cg_tolerance", c.solver.cg_tolerance},
                 {"prune_log10", c.solver.prune_log10},
                 {"force_cg", c.solver.force_cg},
                 {"band_work_budget", c.solver.band_work_budget},
                 {"band_memory_budget", c.solver.band_memory_budget}};
  j["critical"] = {{"per_dim", c.critical.per_dim}, {"tolerance", c.critical.tolerance}};
  j["gate"] = {{"grid_nodes", c.gate.grid_nodes}, {"tie_tolerance", c.gate.tie_tolerance}};
  if (c.start) j["start"] = *c.start;
  if (!c.set_a.empty()) {
    for (const auto& y : c.set_a) j["sets"]["A"].push_back(y.plus_counts);
    for (const auto& y : c.set_b) j["sets"]["B"].push_back(y.plus_counts);
  }
  j["mc"] = {{"trajectories", c.mc.trajectories},
             {"seed", c.mc.seed},
             {"max_steps", c.mc.max_steps},
             {"step_budget", c.mc.step_budget},
             {"batches", c.mc.batches}};
  j["diagnostics"] = {{"harmonic", c.harmonic_diagnostic}, {"eta", c.eta}};
  return j;
}

// ---------------------------------------------------------------------------
// Model construction

inline std::size_t pattern_dim(const ExperimentConfig& c) {
  return c.disorder.patterns.empty() ? c.disorder.types.front().size() : c.disorder.patterns.size();
}

inline Potential make_potential(const ExperimentConfig& c) {
  const std::size_t p = pattern_dim(c);
  try {
    if (c.potential.kind == "hopfield") return Potential::hopfield(p);
    if (c.potential.kind == "random_field") return Potential::random_field(p, c.potential.h);
    return Potential(p, c.potential.terms, "polynomial");
  } catch (const ValidationError& e) {
    throw ValidationError(c.source + ": potential: " + e.what());
  }
}

struct Realization {
  TypeTable table;
  std::optional<PatternEnsemble> ensemble;  // present when built from pattern laws
};

//! Counts n * fractions rounded by largest remainder.
inline std::vector<long> split_counts(const std::vector<double>& fractions, long n) {
  std::vector<long> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> rem;
  long assigned = 0;
  for (std::size_t a = 0; a < fractions.size(); ++a) {
    const double exact = fractions[a] * static_cast<double>(n);
    counts[a] = static_cast<long>(std::floor(exact + 1e-9));
    assigned += counts[a];
    rem.emplace_back(-(exact - static_cast<double>(counts[a])), a);
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[rem[r % rem.size()].second];
  return counts;
}

inline Realization realize(const ExperimentConfig& c, long n) {
  Realization r;
  try {
    if (!c.disorder.patterns.empty()) {
      r.ensemble = c.disorder.realization == "sampled"
                       ? sample_patterns(c.disorder.patterns, static_cast<std::size_t>(n), c.disorder.seed)
                       : expected_patterns(c.disorder.patterns, static_cast<std::size_t>(n));
      r.table = type_decomposition(*r.ensemble);
    } else {
      r.table = TypeTable(c.disorder.types, split_counts(c.disorder.fractions, n));
    }
  } catch (const ValidationError& e) {
    throw ValidationError(c.source + ": disorder at n=" + std::to_string(n) + ": " + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Content-addressed cache of harmonic solutions

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalError("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/**
 * @brief Harmonic solutions on disk, one file per key. Entries carry a digest of
 * their payload; a mismatch is treated as a miss and the entry is rewritten.
 */
class SolveCache {
 public:
  SolveCache() = default;
  explicit SolveCache(std::string dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  bool enabled() const { return !dir_.empty(); }
  const std::string& dir() const { return dir_; }

  static std::string key(const ConductanceGraph& g, const std::string& model, const std::vector<std::size_t>& A,
                         const std::vector<std::size_t>& B, const SolverOptions& opt) {
    std::ostringstream os;
    os << std::hexfloat << "v1|" << model << "|N=" << g.size() << "|A=";
    for (auto a : A) os << a << ',';
    os << "|B=";
    for (auto b : B) os << b << ',';
    os << "|prune=" << opt.prune << ',' << opt.prune_log10 << "|cg=" << opt.cg_tolerance << ',' << opt.force_cg
       << "|band=" << opt.band_work_budget << ',' << opt.band_memory_budget;
    return sha256_hex(os.str());
  }

  std::optional<HarmonicSolution> load(const std::string& key, std::size_t N) const {
    if (!enabled()) return std::nullopt;
    const auto path = std::filesystem::path(dir_) / (key + ".bin");
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 64 || sha256_hex(blob.substr(0, blob.size() - 64)) != blob.substr(blob.size() - 64)) {
      log_line("cache: corrupt entry " + path.string() + ", recomputing");
      return std::nullopt;
    }
    std::istringstream is(blob.substr(0, blob.size() - 64));
    HarmonicSolution h;
    std::uint64_t n = 0, len = 0;
    read(is, n);
    if (n != N) {
      log_line("cache: size mismatch in " + path.string() + ", recomputing");
      return std::nullopt;
    }
    read(is, h.log_capacity);
    read(is, len);
    h.stats.method.resize(len);
    is.read(h.stats.method.data(), static_cast<std::streamsize>(len));
    std::uint64_t active = 0, pruned = 0, disconnected = 0, bandwidth = 0;
    read(is, active);
    read(is, pruned);
    read(is, disconnected);
    read(is, bandwidth);
    h.stats.active = active;
    h.stats.pruned = pruned;
    h.stats.disconnected = disconnected;
    h.stats.bandwidth = bandwidth;
    h.phi.resize(N);
    h.psi.resize(N);
    is.read(reinterpret_cast<char*>(h.phi.data()), static_cast<std::streamsize>(N * sizeof(double)));
    is.read(reinterpret_cast<char*>(h.psi.data()), static_cast<std::streamsize>(N * sizeof(double)));
    if (!is) {
      log_line("cache: truncated entry " + path.string() + ", recomputing");
      return std::nullopt;
    }
    h.stats.cache_hit = true;
    return h;
  }

  void store(const std::string& key, const HarmonicSolution& h) const {
    if (!enabled()) return;
    std::ostringstream os;
    write(os, static_cast<std::uint64_t>(h.phi.size()));
    write(os, h.log_capacity);
    write(os, static_cast<std::uint64_t>(h.stats.method.size()));
    os.write(h.stats.method.data(), static_cast<std::streamsize>(h.stats.method.size()));
    write(os, static_cast<std::uint64_t>(h.stats.active));
    write(os, static_cast<std::uint64_t>(h.stats.pruned));
    write(os, static_cast<std::uint64_t>(h.stats.disconnected));
    write(os, static_cast<std::uint64_t>(h.stats.bandwidth));
    os.write(reinterpret_cast<const char*>(h.phi.data()), static_cast<std::streamsize>(h.phi.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(h.psi.data()), static_cast<std::streamsize>(h.psi.size() * sizeof(double)));
    std::string blob = os.str();
    blob += sha256_hex(blob);
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    const auto path = std::filesystem::path(dir_) / (key + ".bin");
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
      if (!out) throw NumericalError("cache: cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  template <class T>
  static void write(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <class T>
  static void read(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
  }

  std::string dir_;
};

//! Cache directory from the config, else the environment, else disabled.
inline SolveCache make_cache(const ExperimentConfig& c) {
  if (!c.cache) return {};
  if (!c.cache_dir.empty()) return SolveCache(c.cache_dir);
  if (const char* env = std::getenv(kCacheEnv); env && *env) return SolveCache(env);
  return {};
}

inline HarmonicSolution cached_solve(const ConductanceGraph& g, const std::string& model, const std::vector<std::size_t>& A,
                                     const std::vector<std::size_t>& B, const SolverOptions& opt, const SolveCache& cache) {
  const std::string key = cache.enabled() ? SolveCache::key(g, model, A, B, opt) : std::string();
  if (cache.enabled())
    if (auto hit = cache.load(key, g.size())) {
      log_line("cache: hit " + key.substr(0, 12));
      return *hit;
    }
  HarmonicSolution h = solve_harmonic(g, A, B, opt);
  if (cache.enabled()) cache.store(key, h);
  return h;
}

// ---------------------------------------------------------------------------
// Per-instance pipeline

/**
 * @brief Everything built for one (model, n): realization, chain, rate function,
 * landscape, boundary sets and the exact solve.
 */
struct Instance {
  long n = 0;
  Realization realization;
  std::shared_ptr<LatticeChain> chain;
  std::shared_ptr<RateModel> rate;
  ConductanceGraph graph;
  std::vector<CriticalPoint> critical;
  std::optional<GateSet> gate;
  std::optional<LatticePoint> m_point;
  std::vector<std::size_t> A, B;
  std::string model_key;

  const TypeTable& table() const { return realization.table; }
};

inline std::size_t nearest_minimum(const std::vector<CriticalPoint>& cps, const std::vector<double>& x) {
  std::optional<std::size_t> best;
  double bd = kInf;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (cps[i].kind != PointKind::minimum || static_cast<std::size_t>(cps[i].x.size()) != x.size()) continue;
    double d = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) d += std::pow(cps[i].x[static_cast<Eigen::Index>(j)] - x[j], 2);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  if (!best) throw ValidationError("start: no local minimum of matching dimension");
  return *best;
}

//! Builds the chain and, unless explicit sets are configured, the landscape and the sets A, B.
inline Instance prepare(const ExperimentConfig& c, long n, bool need_landscape = true) {
  Instance in;
  in.n = n;
  in.realization = realize(c, n);
  const Potential v = make_potential(c);
  in.chain = std::make_shared<LatticeChain>(in.table(), c.beta, v);
  in.rate = std::make_shared<RateModel>(RateModel::quenched(c.beta, v, in.table()));
  in.graph = conductance_graph(*in.chain);
  in.model_key = in.table().describe() + "|beta=" + format_double(c.beta) + "|" + v.describe();
  const bool explicit_sets = !c.set_a.empty();
  if (need_landscape || !explicit_sets) {
    in.critical = find_critical_points(*in.rate, c.critical);
    const std::size_t mi = c.start ? nearest_minimum(in.critical, *c.start) : default_start_minimum(in.critical);
    in.gate = find_gate(in.critical, *in.rate, mi, c.gate);
    in.m_point = lattice_representative(in.gate->m.x, in.chain->measure());
  }
  const auto& lat = in.chain->lattice();
  auto index_of = [&](const LatticePoint& y, const char* set) {
    try {
      validate(y, in.table());
      return lat.index(y);
    } catch (const ValidationError& e) {
      throw ValidationError(c.source + ": sets." + set + ": " + e.what());
    }
  };
  if (explicit_sets) {
    for (const auto& y : c.set_a) in.A.push_back(index_of(y, "A"));
    for (const auto& y : c.set_b) in.B.push_back(index_of(y, "B"));
  } else {
    for (const auto& y : lattice_fiber(*in.m_point, in.chain->measure())) in.A.push_back(lat.index(y));
    std::set<std::size_t> b;
    for (const auto& M : in.gate->M)
      for (const auto& y : lattice_fiber(lattice_representative(M.x, in.chain->measure()), in.chain->measure()))
        b.insert(lat.index(y));
    in.B.assign(b.begin(), b.end());
    if (in.B.empty()) throw AssumptionFailure("no deeper minimum: the starting minimum is the global one");
  }
  return in;
}

struct VariantValue {
  HessianMode mode;
  FormulaVariant variant;
  double log_value = std::numeric_limits<double>::quiet_NaN();  // NaN when degenerate

  std::string name() const {
    return std::string(to_string(mode)) + "/" + to_string(variant.norm) + "/" + to_string(variant.direction);
  }
};

inline std::vector<std::pair<HessianMode, FormulaVariant>> all_variants() {
  std::vector<std::pair<HessianMode, FormulaVariant>> v;
  for (auto m : {HessianMode::exact, HessianMode::paper})
    for (auto s : {StepNorm::step, StepNorm::unit})
      for (auto d : {GateDirection::w, GateDirection::v1}) v.push_back({m, {s, d}});
  return v;
}

struct AsymptoticReport {
  std::vector<SaddleData> saddles;  // configured Hessian mode
  MinimumData minimum;
  double log_upper_bound = std::numeric_limits<double>::quiet_NaN();
  double log_asymptotic = std::numeric_limits<double>::quiet_NaN();
  std::vector<VariantValue> variants;
  Prefactor prefactor;
  double barrier = 0.0;
};

inline std::vector<SaddleData> lifted_saddles(const Instance& in, HessianMode mode) {
  const Vec toward = y_coordinates(plus_counts_vec(*in.m_point), in.table());
  std::vector<SaddleData> out;
  std::set<std::size_t> seen;
  for (const auto& z : in.gate->Z) {
    const LatticePoint rep = lattice_representative(z.x, in.chain->measure());
    const std::size_t idx = in.chain->lattice().index(rep);
    if (!seen.insert(idx).second) continue;
    out.push_back(saddle_eigendata(rep, *in.chain, *in.rate, mode, toward));
  }
  return out;
}

inline AsymptoticReport asymptotics(const Instance& in, const ModeConfig& mode) {
  if (!in.gate) throw ValidationError("asymptotics: the landscape was not computed");
  AsymptoticReport r;
  r.barrier = in.gate->gate_value - in.gate->m.value;
  std::vector<SaddleData> other;
  for (auto m : {HessianMode::exact, HessianMode::paper}) {
    auto s = lifted_saddles(in, m);
    for (const auto& [vm, fv] : all_variants())
      if (vm == m) r.variants.push_back({m, fv, capacity_asymptotic(s, in.n, fv)});
    if (m == mode.hessian)
      r.saddles = std::move(s);
  }
  const FormulaVariant fv{mode.norm, mode.direction};
  r.log_upper_bound = capacity_upper_bound(r.saddles, in.n, fv);
  r.log_asymptotic = capacity_asymptotic(r.saddles, in.n, fv);
  r.minimum = minimum_data(*in.m_point, *in.chain, *in.rate, mode.hessian);
  r.prefactor = prefactor_cn(r.minimum, r.saddles, in.n, r.barrier, fv);
  return r;
}

struct InstanceReport {
  long n = 0;
  std::string table;
  std::optional<GateSet> gate;
  std::size_t states = 0, size_a = 0, size_b = 0;
  CapacityReport capacity;
  std::optional<AsymptoticReport> asym;
  std::optional<McResult> mc;
  std::vector<HarmonicDiagnostic> harmonic;
  double seconds = 0.0;
};

struct RunOptions {
  bool asymptotics = true;
  bool mc = true;
};

inline InstanceReport run_instance(const ExperimentConfig& c, long n, const SolveCache& cache, const RunOptions& ro = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  Instance in = prepare(c, n, ro.asymptotics);
  InstanceReport r;
  r.n = n;
  r.table = in.table().describe();
  r.gate = in.gate;
  r.states = in.chain->size();
  r.size_a = in.A.size();
  r.size_b = in.B.size();
  r.capacity.solution = cached_solve(in.graph, in.model_key, in.A, in.B, c.solver, cache);
  const HarmonicSolution& h = r.capacity.solution;
  r.capacity.log_capacity = h.log_capacity;
  r.capacity.log_capacity_flux = log_flux_capacity(in.graph, h, in.A);
  r.capacity.log_capacity_dirichlet = log_dirichlet_form(in.graph, h);
  r.capacity.log_valley_mass = log_valley_mass(in.graph, h);
  r.capacity.hitting = mean_hitting(in.graph, h, in.A);
  log_line("n=" + std::to_string(n) + ": log cap = " + format_double(h.log_capacity) + " (" + h.stats.method +
           (h.stats.cache_hit ? ", cached" : "") + ")");
  if (ro.asymptotics && in.gate) {
    r.asym = asymptotics(in, c.mode);
    if (c.harmonic_diagnostic)
      for (const auto& s : r.asym->saddles) r.harmonic.push_back(harmonic_diagnostic(s, *in.chain, c.eta, &h));
  }
  if (ro.mc && c.mc.trajectories > 0) {
    McOptions mo;
    mo.trajectories = c.mc.trajectories;
    mo.seed = c.mc.seed;
    mo.max_steps = c.mc.max_steps;
    mo.total_step_budget = c.mc.step_budget;
    mo.predicted_mean = std::exp(r.capacity.hitting.log_mean);
    mo.batches = c.mc.batches;
    r.mc = simulate_hits(jump_table(*in.chain), StartLaw::from(r.capacity.hitting), in.B, mo);
  }
  r.capacity.solution.phi.clear();
  r.capacity.solution.psi.clear();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

//! Runs every n of the config on a small worker pool; results keep the order of c.n.
inline std::vector<InstanceReport> run_all(const ExperimentConfig& c, const SolveCache& cache, const RunOptions& ro = {}) {
  std::vector<InstanceReport> out(c.n.size());
  std::vector<std::exception_ptr> errors(c.n.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < c.n.size();) {
      try {
        out[k] = run_instance(c, c.n[k], cache, ro);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::size_t threads = c.workers ? c.workers : std::max(1U, std::thread::hardware_concurrency());
  threads = std::min(threads, c.n.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Convergence table

inline double ratio(double log_a, double log_b) { return std::exp(log_a - log_b); }

/**
 * @brief Variants whose exact/asymptotic capacity ratio is within tol of 1 at the
 * largest n and approaches 1 monotonically over the n >= n_from part of the sweep.
 */
inline std::vector<std::string> convergent_variants(const std::vector<InstanceReport>& rs, double tol = 0.15,
                                                    long n_from = 100) {
  std::vector<std::string> out;
  if (rs.empty() || !rs.front().asym) return out;
  for (std::size_t v = 0; v < rs.front().asym->variants.size(); ++v) {
    std::vector<double> dev;
    bool finite = true;
    for (const auto& r : rs) {
      const double lv = r.asym->variants[v].log_value;
      if (!std::isfinite(lv)) finite = false;
      if (r.n >= n_from) dev.push_back(std::abs(1.0 - ratio(r.capacity.log_capacity, lv)));
    }
    if (!finite || dev.empty() || dev.back() > tol) continue;
    bool mono = true;
    for (std::size_t k = 1; k < dev.size(); ++k) mono = mono && dev[k] <= dev[k - 1];
    if (mono) out.push_back(rs.front().asym->variants[v].name());
  }
  return out;
}

inline void write_convergence_csv(std::ostream& os, const std::vector<InstanceReport>& rs) {
  os << std::setprecision(12);
  os << "n,states,log_cap_exact,log_upper_bound,log_cap_asymptotic";
  if (!rs.empty() && rs.front().asym)
    for (const auto& v : rs.front().asym->variants) os << ",ratio_" << v.name();
  os << ",log_tau_exact,log_tau_prediction,ratio_tau,valley_exact,valley_asymptotic,ratio_valley,mc_mean,mc_stderr,ratio_mc\n";
  for (const auto& r : rs) {
    const double lc = r.capacity.log_capacity;
    os << r.n << ',' << r.states << ',' << lc;
    if (r.asym) {
      os << ',' << r.asym->log_upper_bound << ',' << r.asym->log_asymptotic;
      for (const auto& v : r.asym->variants) os << ',' << ratio(lc, v.log_value);
    } else {
      os << ",,";
    }
    const double lt = r.capacity.hitting.log_mean;
    os << ',' << lt;
    if (r.asym)
      os << ',' << r.asym->prefactor.log_prediction << ',' << ratio(r.asym->prefactor.log_prediction, lt) << ','
         << std::exp(r.capacity.log_valley_mass) << ',' << std::exp(r.asym->prefactor.log_valley_asymptotic) << ','
         << ratio(r.asym->prefactor.log_valley_asymptotic, r.capacity.log_valley_mass);
    else
      os << ",,,,,";
    if (r.mc)
      os << ',' << r.mc->mean << ',' << r.mc->std_error << ',' << r.mc->mean / std::exp(lt);
    else
      os << ",,,";
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON

inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json vec_json(const Vec& x) {
  json j = json::array();
  for (Eigen::Index i = 0; i < x.size(); ++i) j.push_back(num(x[i]));
  return j;
}

inline json to_json(const CriticalPoint& p) {
  return {{"x", vec_json(p.x)}, {"I", num(p.value)}, {"kind", to_string(p.kind)}, {"hessian_eigenvalues", vec_json(p.eigenvalues)}};
}

inline json to_json(const GateSet& g) {
  json j{{"m", to_json(g.m)}, {"gate_value", num(g.gate_value)}, {"barrier", num(g.gate_value - g.m.value)}};
  j["M"] = json::array();
  for (const auto& p : g.M) j["M"].push_back(to_json(p));
  j["Z"] = json::array();
  for (const auto& p : g.Z) j["Z"].push_back(to_json(p));
  return j;
}

inline json to_json(const SaddleData& s) {
  auto ns = [](const NormalizedSaddle& x) {
    return json{{"lambda", num(x.lambda)}, {"Gamma", x.Gamma.size()}, {"degenerate", x.degenerate},
                {"log_dir_w", num(x.log_dir_w)}, {"log_dir_v1", num(x.log_dir_v1)}, {"w", vec_json(x.w)}};
  };
  return {{"plus_counts", s.point.plus_counts}, {"x", vec_json(s.x)}, {"gamma", vec_json(s.eig.gamma)},
          {"rates", vec_json(s.rates)}, {"log_q", num(s.log_q)}, {"log_kappa", num(s.log_kappa)},
          {"dice", s.dice}, {"step", ns(s.step)}, {"unit", ns(s.unit)}};
}

inline json to_json(const McResult& m) {
  return {{"trajectories", m.samples.size() + m.censored.size()}, {"completed", m.samples.size()},
          {"censored", m.censored.size()}, {"mean", num(m.mean)}, {"stderr", num(m.std_error)},
          {"ci95", {num(m.ci_low), num(m.ci_high)}}, {"ks_statistic", num(m.ks_statistic)}, {"ks_pvalue", num(m.ks_pvalue)}};
}

inline json to_json(const InstanceReport& r) {
  json j{{"n", r.n}, {"types", r.table}, {"states", r.states}, {"size_A", r.size_a}, {"size_B", r.size_b}};
  if (r.gate) j["gate"] = to_json(*r.gate);
  const auto& h = r.capacity.solution.stats;
  j["exact"] = {{"log_capacity", num(r.capacity.log_capacity)},
                {"log_capacity_flux", num(r.capacity.log_capacity_flux)},
                {"log_capacity_dirichlet", num(r.capacity.log_capacity_dirichlet)},
                {"log_valley_mass", num(r.capacity.log_valley_mass)},
                {"log_mean_hitting_time", num(r.capacity.hitting.log_mean)},
                {"solver", {{"method", h.method}, {"active", h.active}, {"pruned", h.pruned},
                            {"disconnected", h.disconnected}, {"bandwidth", h.bandwidth},
                            {"iterations", h.iterations}, {"cache_hit", h.cache_hit}}}};
  if (r.asym) {
    const auto& a = *r.asym;
    json s = json::array();
    for (const auto& sd : a.saddles) s.push_back(to_json(sd));
    json v = json::object();
    for (const auto& x : a.variants)
      v[x.name()] = {{"log_capacity", num(x.log_value)}, {"ratio_exact", num(ratio(r.capacity.log_capacity, x.log_value))}};
    j["asymptotics"] = {
        {"saddles", s},
        {"minimum", {{"plus_counts", a.minimum.point.plus_counts}, {"gamma", vec_json(a.minimum.eig.gamma)},
                     {"Gamma", a.minimum.Gamma.size()}, {"dice", a.minimum.dice},
                     {"dice_unclipped", a.minimum.dice_unclipped}, {"log_q", num(a.minimum.log_q)},
                     {"log_kappa", num(a.minimum.log_kappa)}}},
        {"log_upper_bound", num(a.log_upper_bound)},
        {"log_capacity", num(a.log_asymptotic)},
        {"ratio_capacity", num(ratio(r.capacity.log_capacity, a.log_asymptotic))},
        {"variants", v},
        {"log_prefactor", num(a.prefactor.log_cn)},
        {"log_tau_prediction", num(a.prefactor.log_prediction)},
        {"ratio_tau", num(ratio(a.prefactor.log_prediction, r.capacity.hitting.log_mean))},
        {"log_valley_asymptotic", num(a.prefactor.log_valley_asymptotic)},
        {"ratio_valley", num(ratio(a.prefactor.log_valley_asymptotic, r.capacity.log_valley_mass))},
        {"ratio_valley_unclipped", num(ratio(a.prefactor.log_valley_unclipped, r.capacity.log_valley_mass))},
        {"barrier", num(a.barrier)}};
  }
  if (!r.harmonic.empty()) {
    j["harmonic_diagnostic"] = json::array();
    for (const auto& d : r.harmonic)
      j["harmonic_diagnostic"].push_back({{"points", d.points}, {"n_max_diff", num(static_cast<double>(r.n) * d.max_diff)},
                                          {"n_max_diff_global", num(static_cast<double>(r.n) * d.max_diff_global)},
                                          {"bound_holds", d.check.holds}});
  }
  if (r.mc) {
    j["mc"] = to_json(*r.mc);
    j["mc"]["ratio_exact"] = num(r.mc->mean / std::exp(r.capacity.hitting.log_mean));
  }
  return j;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline json run_report(const ExperimentConfig& c, const std::vector<InstanceReport>& rs) {
  json j;
  j["generated_at"] = utc_timestamp();
  j["version"] = kVersion;
  j["config"] = to_json(c);
  j["seeds"] = {{"disorder", c.disorder.seed}, {"mc", c.mc.seed}};
  j["instances"] = json::array();
  for (const auto& r : rs) {
    json x = to_json(r);
    x.erase("seconds");
    j["instances"].push_back(std::move(x));
  }
  if (!rs.empty() && rs.front().asym) j["convergent_variants"] = convergent_variants(rs);
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw NumericalError("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Oracle suite

struct Check {
  std::string name;
  bool passed = false;
  double value = 0.0;  // the measured error
  double tolerance = 0.0;
};

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

//! Spin-level vs lattice chain: rates, weights, and the capacity and hitting time between the two corners.
inline std::vector<Check> lumping_checks(const PatternEnsemble& e, double beta, const Potential& v) {
  std::vector<Check> out;
  SpinChain spins(e, beta, v);
  LatticeChain chain(spins.table(), beta, v);
  LumpCheck lc = lump_check(chain, spins);
  const std::string tag = "n=" + std::to_string(e.n) + " ";
  out.push_back({tag + "lumped rates", lc.max_rate_error <= 1e-12, lc.max_rate_error, 1e-12});
  out.push_back({tag + "lumped holding", lc.max_holding_error <= 1e-12, lc.max_holding_error, 1e-12});
  out.push_back({tag + "lumped weights", lc.max_weight_error <= 1e-12, lc.max_weight_error, 1e-12});

  const std::size_t top = spins.size() - 1;
  auto gs = conductance_graph(spins);
  auto gl = conductance_graph(chain);
  const std::size_t la = 0, lb = chain.size() - 1;  // all minus, all plus
  auto rs = capacity_report(gs, {0}, {top});
  auto rl = capacity_report(gl, {la}, {lb});
  const double dc = rel_diff(std::exp(rs.log_capacity), std::exp(rl.log_capacity));
  const double dt = rel_diff(std::exp(rs.hitting.log_mean), std::exp(rl.hitting.log_mean));
  out.push_back({tag + "spin vs lumped capacity", dc <= 1e-9, dc, 1e-9});
  out.push_back({tag + "spin vs lumped hitting time", dt <= 1e-9, dt, 1e-9});
  return out;
}

inline Check balance_check(const LatticeChain& chain, const std::string& tag) {
  ChainCheck cc = check_chain(chain);
  return {tag + " detailed balance and stochasticity", cc.max_balance_error <= 1e-12 && cc.stochastic && cc.irreducible,
          cc.max_balance_error, 1e-12};
}

//! Single-type chain against the series-resistance formulas; A near the minimum below, B at the middle.
inline std::vector<Check> birth_death_checks(long n, double beta, const Potential& v1d) {
  if (v1d.dim() != 1) throw ValidationError("birth_death_checks: potential must be one-dimensional");
  std::vector<Check> out;
  TypeTable t({{1.0}}, {n});
  LatticeChain chain(t, beta, v1d);
  oracle::BirthDeath bd(n, beta, 1.0, [&](double x) { return v1d.value(Vec::Constant(1, x)); });
  long a = 0;
  for (long k = 0; k <= n / 2; ++k)
    if (bd.log_q[static_cast<std::size_t>(k)] > bd.log_q[static_cast<std::size_t>(a)]) a = k;
  const long b = std::max(a + 1, n / 2);
  auto g = conductance_graph(chain);
  auto at = [&](long k) { return chain.lattice().index(LatticePoint{{k}}); };
  SolverOptions opt;
  opt.prune = false;
  auto h = solve_harmonic(g, {at(a)}, {at(b)}, opt);
  const std::string tag = "n=" + std::to_string(n) + " ";
  const double lc = bd.log_capacity(a, b);
  const double dc = std::abs(std::expm1(h.log_capacity - lc));
  out.push_back({tag + "birth-death capacity", dc <= 1e-8, dc, 1e-8});
  double dphi = 0.0;
  for (long k = a; k <= b; ++k) {
    const double ref = bd.phi(a, b, k);
    dphi = std::max(dphi, std::abs(h.phi[at(k)] - ref) / std::max(ref, 1e-300));
  }
  out.push_back({tag + "birth-death equilibrium potential", dphi <= 1e-8, dphi, 1e-8});
  HittingTime ht = mean_hitting(g, h, {at(a)});
  const double dt = std::abs(std::expm1(ht.log_mean - bd.log_mean_hit(a, b)));
  out.push_back({tag + "birth-death mean hitting time", dt <= 1e-8, dt, 1e-8});
  return out;
}

//! The checks run by `verify` for every n of a config.
inline std::vector<Check> verify_suite(const ExperimentConfig& c) {
  std::vector<Check> out;
  const Potential v = make_potential(c);
  for (long n : c.n) {
    Realization r = realize(c, n);
    LatticeChain chain(r.table, c.beta, v);
    out.push_back(balance_check(chain, "n=" + std::to_string(n)));
    if (n <= 16) {
      PatternEnsemble e = r.ensemble ? *r.ensemble : ensemble_from_table(r.table);
      for (auto& x : lumping_checks(e, c.beta, v)) out.push_back(std::move(x));
    }
    const Potential v1 = v.dim() == 1 ? v : Potential::hopfield(1);
    for (auto& x : birth_death_checks(n, c.beta, v1)) out.push_back(std::move(x));
  }
  return out;
}

}  // namespace hopmeta
