#include "decopt/acceptance.hpp"
#include "decopt/simulation.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace decopt;

namespace {

ProblemInstance instance(int m, std::uint64_t seed) {
  ProblemSpec s;
  s.m = m;
  s.n = 2;
  s.mu = 0.4;
  s.L = 1.0;
  s.seed = seed;
  return make_instance(s);
}

}  // namespace

TEST(SimulatedNetwork, MixMatchesApplyBlock) {
  std::mt19937_64 gen(6);
  std::normal_distribution<double> nd;
  for (const LaplacianGraph& g : {path_graph(7), star_graph(6), erdos_renyi_graph(12, 0.3, 4)}) {
    const int n = 3;
    SimulationConfig sc;
    sc.threads = 3;
    SimulatedNetwork net(g, n, sc);
    for (int t = 0; t < 100; ++t) {
      Vector v(g.m() * n), out(g.m() * n), ref(g.m() * n);
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = nd(gen);
      net.mix(v, out);
      apply_block(g, v, ref, n);
      EXPECT_LE((out - ref).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_EQ(net.rounds(), 100);
    EXPECT_EQ(net.round_log().size(), 100u);
    EXPECT_EQ(net.round_log().front().messages, 2 * static_cast<long>(g.edges().size()));
    EXPECT_TRUE(audit_locality(net.access_log(), g));
  }
}

TEST(SimulatedNetwork, RoundsMatchCentralized) {
  const ProblemInstance p = instance(5, 2);
  const LaplacianGraph g = cycle_graph(5);
  MethodOptions o;
  o.eps = 1e-2;
  for (Method m : {Method::pstm, Method::pdstm, Method::dual_sc}) {
    const Execution c = run_centralized(m, p, g, {}, o);
    const Execution s = simulate(m, p, g, {}, o);
    EXPECT_EQ(c.rounds, s.rounds) << to_string(m);
    EXPECT_EQ(c.oracle_calls, s.oracle_calls) << to_string(m);
    EXPECT_GT(s.rounds, 0);
  }
}

TEST(Simulate, TwoNodePdstmEqualsCentralized) {
  Matrix h = Matrix::Identity(1, 1);
  const ProblemInstance p = make_explicit_quadratic({h, h}, {Vector::Zero(1), Vector::Constant(1, 2.0)});
  const LaplacianGraph g = path_graph(2);
  MethodOptions o;
  o.eps = 1e-3;
  const Execution c = run_centralized(Method::pdstm, p, g, {}, o);
  const Execution s = simulate(Method::pdstm, p, g, {}, o);
  EXPECT_LE((c.result.x.data() - s.result.x.data()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(s.locality_ok);
}

TEST(EquivalenceCheck, DeterministicAndStochastic) {
  const ProblemInstance p = instance(6, 3);
  const LaplacianGraph g = random_geometric_graph(6, 0.6, 2);
  StochasticOracleConfig cfg;
  cfg.sigma = 1.0;
  cfg.sigma_phi = 1.0;
  MethodOptions o;
  o.eps = 1e-2;
  o.iterations = 30;
  EXPECT_LE(equivalence_check(Method::pdstm, p, g, cfg, o, 5, 5), 1e-12);
  EXPECT_LE(equivalence_check(Method::spdstm, p, g, cfg, o, 5, 5, 3), 1e-12);
  EXPECT_LE(equivalence_check(Method::pbstm, p, g, cfg, o, 5, 5, 2), 1e-12);
}

TEST(EquivalenceCheck, MismatchedSeedsDiffer) {
  const ProblemInstance p = instance(4, 3);
  const LaplacianGraph g = path_graph(4);
  StochasticOracleConfig cfg;
  cfg.sigma_phi = 1.0;
  MethodOptions o;
  o.iterations = 10;
  EXPECT_GT(equivalence_check(Method::spdstm, p, g, cfg, o, 1, 2), 0.0);
}

TEST(AuditLocality, ShippedMethodsPass) {
  const ProblemInstance p = instance(5, 1);
  StochasticOracleConfig cfg;
  cfg.sigma = 0.5;
  cfg.sigma_phi = 0.5;
  MethodOptions o;
  o.eps = 1e-2;
  o.iterations = 10;
  for (const LaplacianGraph& g : {path_graph(5), star_graph(5), complete_graph(5)})
    for (Method m : {Method::pstm, Method::pbstm, Method::pdstm, Method::spdstm}) {
      const Execution ex = simulate(m, p, g, cfg, o);
      EXPECT_TRUE(ex.locality_ok);
      EXPECT_FALSE(ex.access.empty());
    }
}

TEST(AuditLocality, TwoHopDoubleFails) {
  const LaplacianGraph g = path_graph(4);
  acceptance::TwoHopNetwork bad(g, 1);
  Vector v = Vector::LinSpaced(4, 0, 3), out(4);
  bad.mix(v, out);
  EXPECT_FALSE(audit_locality(bad.access_log(), g));
  Vector ref(4);
  apply_block(g, v, ref, 1);
  EXPECT_EQ(out, ref);
}

TEST(AuditLocality, SingleNodeTriviallyPasses) {
  const LaplacianGraph g = path_graph(1);
  SimulatedNetwork net(g, 2);
  Vector v = Vector::Ones(2), out(2);
  net.mix(v, out);
  EXPECT_TRUE(audit_locality(net.access_log(), g));
  EXPECT_TRUE(audit_locality({}, g));
}

TEST(EventLog, OneLinePerNodeAndRound) {
  const LaplacianGraph g = star_graph(4);
  SimulationConfig sc;
  sc.event_log = true;
  SimulatedNetwork net(g, 1, sc);
  Vector v = Vector::Ones(4), out(4);
  net.mix(v, out);
  net.mix(v, out);
  std::stringstream ss;
  net.write_event_log(ss);
  std::string line;
  int lines = 0;
  while (std::getline(ss, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("round") && j.contains("node") && j.contains("msg_count") && j.contains("oracle_calls"));
    ++lines;
  }
  EXPECT_EQ(lines, 8);
}

TEST(Simulate, ThreadCountDoesNotChangeResults) {
  const ProblemInstance p = instance(8, 4);
  const LaplacianGraph g = erdos_renyi_graph(8, 0.4, 3);
  StochasticOracleConfig cfg;
  cfg.sigma = 1.0;
  cfg.master_seed = 9;
  MethodOptions o;
  o.eps = 5e-2;
  SimulationConfig one, four;
  four.threads = 4;
  const Execution a = simulate(Method::pbstm, p, g, cfg, o, one);
  const Execution b = simulate(Method::pbstm, p, g, cfg, o, four);
  EXPECT_EQ(a.result.x.data(), b.result.x.data());
  EXPECT_EQ(a.oracle_calls, b.oracle_calls);
}

TEST(ParseMethod, Names) {
  EXPECT_EQ(parse_method("pdstm"), Method::pdstm);
  EXPECT_EQ(parse_method("dual_sc_solve"), Method::dual_sc);
  EXPECT_FALSE(parse_method("admm").has_value());
}
