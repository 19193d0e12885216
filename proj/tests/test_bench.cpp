#include "decopt/bench.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace decopt;

namespace {

const char* kMinimal = R"(problem:
  family: quadratic
  n: 1
  mu: 0.5
  L: 1.0
  seed: 3
graph:
  topology: path
  m: 2
method:
  name: pdstm
  eps: 1.0e-3
  n_constant: 2.83
)";

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("decopt_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(RateFit, Examples) {
  RateFit f = rate_fit({{1, 1}, {10, 0.01}});
  EXPECT_NEAR(f.slope, -2.0, 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
  f = rate_fit({{1, 3}, {2, 3}, {5, 3}});
  EXPECT_NEAR(f.slope, 0.0, 1e-15);
  EXPECT_EQ(f.r_squared, 1.0);
  f = rate_fit({{1, 2}, {2, 4}, {4, 8}});
  EXPECT_NEAR(f.slope, 1.0, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(2.0), 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
}

TEST(RateFit, Errors) {
  EXPECT_THROW(rate_fit({{1, 1}, {2, 0}}), NonPositiveData);
  EXPECT_THROW(rate_fit({{-1, 1}, {2, 1}}), NonPositiveData);
  EXPECT_THROW(rate_fit({{1, 1}}), InvalidArgument);
}

TEST(RateFit, RSquaredInUnitInterval) {
  const RateFit f = rate_fit({{1, 1}, {2, 5}, {3, 0.5}, {4, 2}});
  EXPECT_GE(f.r_squared, 0.0);
  EXPECT_LE(f.r_squared, 1.0);
}

TEST(Config, ParsesMinimal) {
  const ExperimentConfig c = parse_config_string(kMinimal);
  EXPECT_EQ(c.method, Method::pdstm);
  EXPECT_EQ(c.graph.m, 2);
  EXPECT_EQ(c.problem.m, 2);
  EXPECT_DOUBLE_EQ(c.options.eps, 1e-3);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{1});
}

TEST(Config, InvalidTopologyNamesField) {
  const std::string text = std::string(kMinimal) + "";
  YAML::Node root = YAML::Load(text);
  root["graph"]["topology"] = "torus";
  try {
    parse_config(root);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("graph.topology"), std::string::npos);
  }
}

TEST(Config, ErrorsCarryLineNumbers) {
  const std::string text = "problem:\n  n: 2\ngraph:\n  topology: hexagon\n  m: 3\n";
  try {
    parse_config_string(text);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("line 4"), std::string::npos) << w;
    EXPECT_NE(w.find("graph.topology"), std::string::npos) << w;
  }
  EXPECT_THROW(parse_config_string("problem:\n  n: two\n"), ConfigError);
  EXPECT_THROW(parse_config_string("problem:\n  colour: red\n"), ConfigError);
  EXPECT_THROW(parse_config_string("plot:\n  x: 1\n"), ConfigError);
  EXPECT_THROW(parse_config_string("method:\n  name: admm\n"), ConfigError);
  EXPECT_THROW(parse_config_string("problem:\n  m: 3\ngraph:\n  m: 4\n"), ConfigError);
  EXPECT_THROW(parse_config_string("problem: [1, 2\n"), ConfigError);
}

TEST(Config, Overrides) {
  YAML::Node root = YAML::Load(kMinimal);
  apply_override(root, "method.eps=0.01");
  apply_override(root, "graph.topology=star");
  apply_override(root, "stochastic.sigma_phi=2");
  const ExperimentConfig c = parse_config(root);
  EXPECT_DOUBLE_EQ(c.options.eps, 0.01);
  EXPECT_EQ(c.graph.topology, "star");
  EXPECT_DOUBLE_EQ(c.stochastic.sigma_phi, 2.0);
  EXPECT_THROW(apply_override(root, "eps=1"), ConfigError);
  EXPECT_THROW(apply_override(root, "method.eps"), ConfigError);
}

TEST(Config, SeedFlagAndFile) {
  const auto dir = temp_dir("seedflag");
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "c.yaml");
    os << kMinimal;
  }
  const ExperimentConfig c = load_config((dir / "c.yaml").string(), {"method.eps=0.1"}, 4);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(c.options.eps, 0.1);
  EXPECT_THROW(load_config((dir / "missing.yaml").string()), ConfigError);
}

TEST(ConfigHash, IgnoresOutputAndSeeds) {
  ExperimentConfig a = parse_config_string(kMinimal);
  ExperimentConfig b = a;
  b.out_dir = "elsewhere";
  b.threads = 8;
  b.seeds = {5, 6};
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a, 3), config_hash(b, 3));
  b.options.eps = 2e-3;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  EXPECT_NE(config_hash(a, 3), config_hash(a, 4));
}

TEST(Run, MinimalReportHasCertificate) {
  const ExperimentConfig c = parse_config_string(kMinimal);
  const SeedOutcome s = run_seed(c, 1);
  EXPECT_TRUE(s.report.error.empty()) << s.report.error;
  EXPECT_TRUE(s.report.duality_gap.has_value());
  EXPECT_TRUE(s.report.success);
  EXPECT_GT(s.report.rounds, 0);
  const auto j = to_json(s.report);
  for (const char* key : {"config_hash", "method", "rounds", "oracle_calls_per_node", "duality_gap", "feasibility",
                          "f_gap", "success", "seed"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Run, TwentySeedsWriteReportsAndAggregate) {
  ExperimentConfig c = parse_config_string(kMinimal);
  c.method = Method::spdstm;
  c.stochastic.sigma_phi = 0.5;
  c.options.eps = 1e-2;
  c.seeds.clear();
  for (std::uint64_t s = 1; s <= 20; ++s) c.seeds.push_back(s);
  c.threads = 4;
  const auto dir = temp_dir("twenty");
  const RunOutput out = run_experiment(c);
  write_run_output(c, out, dir);
  int reports = 0, traces = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    reports += name.rfind("report_", 0) == 0;
    traces += name.rfind("trace_", 0) == 0;
  }
  EXPECT_EQ(reports, 20);
  EXPECT_EQ(traces, 20);
  const auto agg = nlohmann::json::parse(read_file(dir / "aggregate.json"));
  std::size_t ok = 0;
  for (const auto& s : out.seeds) ok += s.report.success;
  EXPECT_DOUBLE_EQ(agg["success_rate"].get<double>(), static_cast<double>(ok) / 20.0);
  EXPECT_EQ(agg["runs"].get<int>(), 20);
  EXPECT_EQ(agg["config_hash"].get<std::string>(), config_hash(c));
  EXPECT_EQ(out.seeds[4].report.config_hash, config_hash(c, 5));
}

TEST(Run, MethodErrorsAreRecordedPerSeed) {
  ExperimentConfig c = parse_config_string(kMinimal);
  c.problem.mu = 0.0;
  c.seeds = {1, 2};
  const RunOutput out = run_experiment(c);
  ASSERT_EQ(out.seeds.size(), 2u);
  for (const auto& s : out.seeds) {
    EXPECT_NE(s.report.error.find("NotStronglyConvex"), std::string::npos);
    EXPECT_FALSE(s.report.success);
  }
  EXPECT_EQ(out.aggregate.errors, 2u);
}

TEST(Run, ReportsAreByteIdentical) {
  ExperimentConfig c = parse_config_string(kMinimal);
  c.method = Method::pbstm;
  c.stochastic.sigma = 1.0;
  c.options.eps = 5e-2;
  c.graph.topology = "star";
  c.graph.m = c.problem.m = 5;
  const std::string a = dump_report(run_seed(c, 3, 1).report);
  const std::string b = dump_report(run_seed(c, 3, 4).report);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, dump_report(run_seed(c, 4, 1).report));
}

TEST(Report, JsonRoundTrip) {
  ExperimentConfig c = parse_config_string(kMinimal);
  const RunReport r = run_seed(c, 2).report;
  const RunReport back = report_from_json(nlohmann::ordered_json::parse(dump_report(r)));
  EXPECT_EQ(dump_report(back), dump_report(r));
}

TEST(Report, TraceCsvRoundTrip) {
  ExperimentConfig c = parse_config_string(kMinimal);
  const SeedOutcome s = run_seed(c, 1);
  ASSERT_FALSE(s.trace.empty());
  std::stringstream ss;
  write_trace_csv(ss, s.trace);
  const std::vector<TraceRow> rows = read_trace_csv(ss);
  ASSERT_EQ(rows.size(), s.trace.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].k, s.trace[i].k);
    EXPECT_EQ(rows[i].A, s.trace[i].A);
    EXPECT_EQ(rows[i].alpha, s.trace[i].alpha);
    EXPECT_EQ(rows[i].grad_norm, s.trace[i].grad_norm);
    EXPECT_EQ(rows[i].rounds, s.trace[i].rounds);
  }
  std::stringstream bad("k,A\n1,2\n");
  EXPECT_THROW(read_trace_csv(bad), InvalidArgument);
}

TEST(Sweep, IterationAxisGivesInverseSquareLaw) {
  const ExperimentConfig c = parse_config_string(R"(problem: {m: 1, n: 50, mu: 0.0, L: 1.0, rotate: false,
          offset_scale: 0.0, offset_center: 1.0}
method: {name: stm}
sweep: {axis: N, values: [16, 32, 64, 128, 256, 512, 1024], fit: f_gap}
)");
  const SweepOutput s = run_sweep(c);
  ASSERT_TRUE(s.fit.has_value()) << s.fit_error;
  EXPECT_LE(s.fit->slope, -1.9);
  const std::string csv = sweep_csv(s);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kSweepHeader);
}

TEST(Sweep, ChiAxisGivesSquareRootLaw) {
  const ExperimentConfig c = parse_config_string(R"(problem: {n: 2, mu: 0.1, L: 1.0, seed: 5, offset_scale: 0.5,
          offset_center: 1.0}
graph: {topology: path, m: 4}
method: {name: pstm, mode: composite, eps: 1.0e-3, stop_on_target: true}
sweep: {axis: chi, values: [4, 8, 16, 32, 64], fit: rounds}
output: {threads: 2}
)");
  const SweepOutput s = run_sweep(c);
  ASSERT_TRUE(s.fit.has_value()) << s.fit_error;
  EXPECT_GE(s.fit->slope, 0.4);
  EXPECT_LE(s.fit->slope, 0.6);
  EXPECT_NEAR(s.rows[1].abscissa, path_graph(8).chi(), 1e-9);
  const auto dir = temp_dir("sweep");
  write_sweep_output(s, dir);
  const auto fit = nlohmann::json::parse(read_file(dir / "fit.json"));
  EXPECT_NEAR(fit["fit"]["slope"].get<double>(), s.fit->slope, 1e-12);
}

TEST(Sweep, AxesModifyTheRightField) {
  ExperimentConfig c = parse_config_string(kMinimal);
  EXPECT_EQ(sweep_point(c, "N", 64).options.iterations, 64);
  EXPECT_DOUBLE_EQ(sweep_point(c, "L_over_mu", 10).problem.L, 5.0);
  EXPECT_DOUBLE_EQ(sweep_point(c, "eps", 0.2).options.eps, 0.2);
  const ExperimentConfig s = sweep_point(c, "sigma", 0.7);
  EXPECT_DOUBLE_EQ(s.stochastic.sigma, 0.7);
  EXPECT_DOUBLE_EQ(s.stochastic.sigma_phi, 0.7);
  EXPECT_EQ(sweep_point(c, "chi", 9).graph.m, 9);
  EXPECT_THROW(sweep_point(c, "beta", 1), ConfigError);
}
