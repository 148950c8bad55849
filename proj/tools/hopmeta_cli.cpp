// hopmeta: exact and asymptotic metastable exit times for lumped Hopfield chains.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "hopmeta/harness.hpp"

namespace fs = std::filesystem;
using namespace hopmeta;

namespace {

struct Overrides {
  std::string config;
  std::vector<long> n;
  std::optional<std::uint64_t> seed;
  std::string mode, gate_dir, el_norm;
  bool no_prune = false;
  std::string out;
  std::string cache;
  bool no_cache = false;
  std::optional<std::size_t> mc_trajectories;
  std::optional<std::size_t> workers;
  int grid = 201;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = load_config(o.config);
  if (!o.n.empty()) {
    for (long v : o.n)
      if (v < 2) throw ValidationError("--n: must be >= 2");
    c.n = o.n;
  }
  if (o.seed) c.disorder.seed = c.mc.seed = *o.seed;
  if (!o.mode.empty()) c.mode.hessian = parse_hessian_mode(o.mode);
  if (!o.gate_dir.empty()) c.mode.direction = parse_gate_direction(o.gate_dir);
  if (!o.el_norm.empty()) c.mode.norm = parse_step_norm(o.el_norm);
  if (o.no_prune) c.solver.prune = false;
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.cache.empty()) c.cache_dir = o.cache;
  if (o.no_cache) c.cache = false;
  if (o.mc_trajectories) c.mc.trajectories = *o.mc_trajectories;
  if (o.workers) c.workers = *o.workers;
  return c;
}

void emit(const ExperimentConfig& c, const std::string& name, const json& j) {
  const std::string text = j.dump(2) + "\n";
  write_text(fs::path(c.out_dir) / name, text);
  std::cout << text;
  log_line("wrote " + (fs::path(c.out_dir) / name).string());
}

json landscape_json(const Instance& in) {
  json j{{"n", in.n}, {"types", in.table().describe()}};
  j["critical_points"] = json::array();
  for (const auto& p : in.critical) j["critical_points"].push_back(to_json(p));
  if (in.gate) j["gate"] = to_json(*in.gate);
  return j;
}

int rate_surface(const ExperimentConfig& c, int grid) {
  if (grid < 2) throw ValidationError("--grid: must be >= 2");
  const long n = c.n.back();
  const Realization r = realize(c, n);
  const RateModel rm = RateModel::quenched(c.beta, make_potential(c), r.table);
  const auto p = static_cast<Eigen::Index>(rm.dim());
  if (p > 2) throw ValidationError("rate-surface: only p <= 2 is supported");
  const Vec b = rm.box();
  const fs::path path = fs::path(c.out_dir) / "rate_surface.csv";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << std::setprecision(12) << (p == 1 ? "x1,I\n" : "x1,x2,I\n");
  auto coord = [&](Eigen::Index j, int i) { return -b[j] + 2.0 * b[j] * i / (grid - 1); };
  const int rows = p == 1 ? 1 : grid;
  for (int i2 = 0; i2 < rows; ++i2)
    for (int i1 = 0; i1 < grid; ++i1) {
      Vec x(p);
      x[0] = coord(0, i1);
      if (p == 2) x[1] = coord(1, i2);
      out << x[0] << ',';
      if (p == 2) out << x[1] << ',';
      if (rm.feasible(x)) {
        const double v = rm.rate_value(x);
        if (std::isfinite(v)) out << v;
      }
      out << '\n';
    }
  log_line("wrote " + path.string());
  return 0;
}

int landscape(const ExperimentConfig& c, bool gate_only) {
  json j = json::array();
  for (long n : c.n) {
    Instance in = prepare(c, n);
    json x = landscape_json(in);
    if (gate_only) x.erase("critical_points");
    j.push_back(std::move(x));
  }
  emit(c, gate_only ? "gate.json" : "critical_points.json", {{"version", kVersion}, {"config", to_json(c)}, {"instances", j}});
  return 0;
}

int run(const ExperimentConfig& c, const std::string& name, const RunOptions& ro, bool table) {
  const SolveCache cache = make_cache(c);
  const auto rs = run_all(c, cache, ro);
  emit(c, name + ".json", run_report(c, rs));
  if (table) {
    std::ostringstream os;
    write_convergence_csv(os, rs);
    write_text(fs::path(c.out_dir) / "convergence.csv", os.str());
    log_line("wrote " + (fs::path(c.out_dir) / "convergence.csv").string());
  }
  return 0;
}

int hit_time(const ExperimentConfig& c) {
  if (c.mc.trajectories == 0) throw ValidationError("hit-time: mc.trajectories must be positive");
  const SolveCache cache = make_cache(c);
  RunOptions ro;
  ro.asymptotics = false;
  auto rs = run_all(c, cache, ro);
  emit(c, "hit_time.json", run_report(c, rs));
  std::ostringstream os;
  write_samples_csv(os, *rs.back().mc);
  write_text(fs::path(c.out_dir) / "samples.csv", os.str());
  log_line("wrote " + (fs::path(c.out_dir) / "samples.csv").string());
  return 0;
}

int verify(const ExperimentConfig& c) {
  const auto checks = verify_suite(c);
  json j = json::array();
  std::size_t failed = 0;
  for (const auto& k : checks) {
    j.push_back({{"check", k.name}, {"passed", k.passed}, {"error", num(k.value)}, {"tolerance", k.tolerance}});
    if (!k.passed) ++failed;
    log_line(std::string(k.passed ? "ok   " : "FAIL ") + k.name + " (" + format_double(k.value) + ")");
  }
  emit(c, "verify.json", {{"version", kVersion}, {"config", to_json(c)}, {"checks", j}, {"failed", failed}});
  return failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact and asymptotic metastable exit times for lumped Hopfield chains"};
  app.require_subcommand(1);
  Overrides o;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "experiment config (YAML)")->required();
    s->add_option("--n", o.n, "system sizes, overriding the config");
    s->add_option("--seed", o.seed, "seed for disorder sampling and Monte Carlo");
    s->add_option("--mode", o.mode, "Hessian mode")->check(CLI::IsMember({"paper", "exact"}));
    s->add_option("--gate-dir", o.gate_dir, "gate direction")->check(CLI::IsMember({"w", "v1"}));
    s->add_option("--el-norm", o.el_norm, "step vector normalization")->check(CLI::IsMember({"step", "unit"}));
    s->add_flag("--no-prune", o.no_prune, "solve on the full lattice");
    s->add_option("--out", o.out, "output directory");
    s->add_option("--cache", o.cache, std::string("solve cache directory (default $") + kCacheEnv + ")");
    s->add_flag("--no-cache", o.no_cache, "disable the solve cache");
    s->add_option("--mc-trajectories", o.mc_trajectories, "Monte Carlo trajectory count");
    s->add_option("--workers", o.workers, "instances solved in parallel");
  };
  auto* surf = app.add_subcommand("rate-surface", "CSV grid of the rate function at the largest n");
  auto* crit = app.add_subcommand("critical-points", "critical points of the rate function");
  auto* gate = app.add_subcommand("gate", "starting minimum, deeper minima and gate saddles");
  auto* cap = app.add_subcommand("capacity", "exact capacity and mean hitting time");
  auto* asym = app.add_subcommand("asymptotics", "exact values against the asymptotic formulas");
  auto* hit = app.add_subcommand("hit-time", "exact mean hitting time and Monte Carlo estimate");
  auto* sweep = app.add_subcommand("sweep", "full pipeline over the n list with the convergence table");
  auto* ver = app.add_subcommand("verify", "lumping, detailed balance and birth-death oracles");
  for (auto* s : {surf, crit, gate, cap, asym, hit, sweep, ver}) common(s);
  surf->add_option("--grid", o.grid, "grid points per axis");

  CLI11_PARSE(app, argc, argv);
  try {
    const ExperimentConfig c = resolve(o);
    RunOptions exact_only{false, false};
    RunOptions no_mc{true, false};
    if (*surf) return rate_surface(c, o.grid);
    if (*crit) return landscape(c, false);
    if (*gate) return landscape(c, true);
    if (*cap) return run(c, "capacity", exact_only, false);
    if (*asym) return run(c, "asymptotics", no_mc, false);
    if (*hit) return hit_time(c);
    if (*sweep) return run(c, "sweep", RunOptions{}, true);
    if (*ver) return verify(c);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
