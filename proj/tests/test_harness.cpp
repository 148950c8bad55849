#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "hopmeta/harness.hpp"

using namespace hopmeta;
namespace fs = std::filesystem;

namespace {

const char* kBenchmark = R"(
disorder:
  patterns:
    - support: [-1, 1]
      probabilities: [0.45, 0.55]
potential:
  kind: hopfield
beta: 1.0
n: [40, 60]
)";

ExperimentConfig benchmark() { return parse_config(YAML::Load(kBenchmark), "bench.yaml"); }

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("hopmeta_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string expect_validation(const std::string& yaml) {
  try {
    parse_config(YAML::Load(yaml), "cfg.yaml");
  } catch (const ValidationError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ValidationError for:\n" << yaml;
  return {};
}

}  // namespace

TEST(Config, ParsesAndResolves) {
  const auto c = benchmark();
  ASSERT_EQ(c.disorder.patterns.size(), 1u);
  EXPECT_EQ(c.n, (std::vector<long>{40, 60}));
  EXPECT_EQ(c.mode.hessian, HessianMode::exact);
  EXPECT_EQ(c.mode.norm, StepNorm::step);
  EXPECT_EQ(c.mode.direction, GateDirection::w);
  const json j = to_json(c);
  EXPECT_EQ(j["mode"]["hessian"], "exact");
  EXPECT_EQ(j["disorder"]["patterns"][0]["probabilities"][1], 0.55);
  EXPECT_EQ(j["n"][1], 60);
}

TEST(Config, RejectsUnknownKeysWithTheirPath) {
  std::string msg = expect_validation(std::string(kBenchmark) + "bogus: 1\n");
  EXPECT_NE(msg.find("cfg.yaml"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'bogus'"), std::string::npos) << msg;
  msg = expect_validation("disorder:\n  types: [[1]]\n  fractions: [1]\nmode:\n  hesian: exact\n");
  EXPECT_NE(msg.find("mode"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'hesian'"), std::string::npos) << msg;
}

TEST(Config, RejectsInvalidValues) {
  expect_validation("disorder:\n  types: [[1]]\n  fractions: [0.5]\n");
  expect_validation("disorder:\n  types: [[1]]\n  fractions: [1]\nbeta: -1\n");
  expect_validation("disorder:\n  types: [[1]]\n  fractions: [1]\nmode:\n  hessian: fancy\n");
  expect_validation("disorder:\n  patterns:\n    - support: [-1, 1]\n      probabilities: [0.3, 0.3]\n");
  expect_validation("potential:\n  kind: hopfield\n");
}

TEST(Config, LargestRemainderCounts) {
  EXPECT_EQ(split_counts({0.5, 0.5}, 7), (std::vector<long>{4, 3}));
  EXPECT_EQ(split_counts({0.2, 0.3, 0.5}, 11), (std::vector<long>{2, 3, 6}));
  EXPECT_EQ(split_counts({1.0 / 3, 1.0 / 3, 1.0 / 3}, 10), (std::vector<long>{4, 3, 3}));
}

TEST(Cache, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Cache, SecondRunHitsAndMatches) {
  const auto dir = scratch("cache");
  auto c = benchmark();
  c.n = {60};
  const SolveCache cache(dir.string());
  RunOptions ro{false, false};
  const auto first = run_instance(c, 60, cache, ro);
  EXPECT_FALSE(first.capacity.solution.stats.cache_hit);
  EXPECT_GT(first.capacity.solution.stats.iterations, 0u);
  const auto second = run_instance(c, 60, cache, ro);
  EXPECT_TRUE(second.capacity.solution.stats.cache_hit);
  EXPECT_EQ(second.capacity.solution.stats.iterations, 0u);
  EXPECT_EQ(second.capacity.log_capacity, first.capacity.log_capacity);
  EXPECT_EQ(second.capacity.hitting.log_mean, first.capacity.hitting.log_mean);

  const auto uncached = run_instance(c, 60, SolveCache(), ro);
  EXPECT_EQ(uncached.capacity.log_capacity, first.capacity.log_capacity);
  EXPECT_EQ(uncached.capacity.log_valley_mass, first.capacity.log_valley_mass);
  fs::remove_all(dir);
}

TEST(Cache, KeyDependsOnBetaAndTolerances) {
  auto c = benchmark();
  const Instance a = prepare(c, 40, false);
  c.beta = 1.05;
  const Instance b = prepare(c, 40, false);
  const SolverOptions opt;
  EXPECT_NE(SolveCache::key(a.graph, a.model_key, a.A, a.B, opt), SolveCache::key(b.graph, b.model_key, a.A, a.B, opt));
  SolverOptions tighter;
  tighter.prune_log10 = 200;
  EXPECT_NE(SolveCache::key(a.graph, a.model_key, a.A, a.B, opt), SolveCache::key(a.graph, a.model_key, a.A, a.B, tighter));
  EXPECT_EQ(SolveCache::key(a.graph, a.model_key, a.A, a.B, opt), SolveCache::key(a.graph, a.model_key, a.A, a.B, opt));
}

TEST(Cache, CorruptEntryIsRecomputed) {
  const auto dir = scratch("corrupt");
  auto c = benchmark();
  const SolveCache cache(dir.string());
  RunOptions ro{false, false};
  const auto first = run_instance(c, 40, cache, ro);
  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++entries;
    std::fstream f(e.path(), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(20);
    f.put('\x7f');
  }
  ASSERT_EQ(entries, 1u);
  const auto second = run_instance(c, 40, cache, ro);
  EXPECT_FALSE(second.capacity.solution.stats.cache_hit);
  EXPECT_EQ(second.capacity.log_capacity, first.capacity.log_capacity);
  const auto third = run_instance(c, 40, cache, ro);
  EXPECT_TRUE(third.capacity.solution.stats.cache_hit);
  fs::remove_all(dir);
}

TEST(Report, IdenticalModuloTimestamp) {
  auto c = benchmark();
  c.n = {24, 26};
  c.mc.trajectories = 100;
  c.mc.seed = 3;
  auto dump = [&] {
    json j = run_report(c, run_all(c, SolveCache()));
    EXPECT_TRUE(j.contains("generated_at"));
    j.erase("generated_at");
    return j.dump(2);
  };
  const std::string a = dump();
  EXPECT_EQ(a, dump());
  EXPECT_NE(a.find("\"convergent_variants\""), std::string::npos);
  EXPECT_NE(a.find("\"ratio_tau\""), std::string::npos);
}

TEST(Report, ConvergenceTableHasFixedColumns) {
  auto c = benchmark();
  std::ostringstream os;
  write_convergence_csv(os, run_all(c, SolveCache(), {true, false}));
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  EXPECT_EQ(header.rfind("n,states,log_cap_exact,log_upper_bound,log_cap_asymptotic,ratio_exact/step/w,", 0), 0u);
  std::size_t rows = 0;
  while (std::getline(is, row)) {
    ++rows;
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
  }
  EXPECT_EQ(rows, 2u);
}

TEST(Pipeline, OverlappingSetsAreRejected) {
  auto c = benchmark();
  c.set_a = {LatticePoint{{18, 1}}};
  c.set_b = {LatticePoint{{18, 1}}, LatticePoint{{0, 22}}};
  EXPECT_THROW(run_instance(c, 40, SolveCache(), {false, false}), ValidationError);
}

TEST(Pipeline, VerifySuitePassesOnSmallModels) {
  auto c = parse_config(YAML::Load("disorder:\n  types: [[1, -1], [1, 1]]\n  fractions: [0.5, 0.5]\n"
                                   "potential:\n  kind: random_field\n  h: 0.3\nbeta: 1.5\nn: [8]\n"),
                        "rfcw");
  for (const auto& k : verify_suite(c)) EXPECT_TRUE(k.passed) << k.name << " " << k.value;
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const fs::path cfg = dir / "overlap.yaml";
  std::ofstream(cfg) << kBenchmark << "sets:\n  A: [[18, 1]]\n  B: [[18, 1]]\n";
  const std::string base = std::string(HOPMETA_CLI) + " capacity --no-cache --out " + (dir / "out").string();
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status(base + " --config " + cfg.string()), 2);
  EXPECT_EQ(status(base + " --config " + (dir / "missing.yaml").string()), 2);
  const fs::path ok = dir / "ok.yaml";
  std::ofstream(ok) << kBenchmark;
  EXPECT_EQ(status(base + " --config " + ok.string() + " --n 30"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "capacity.json"));
  fs::remove_all(dir);
}
