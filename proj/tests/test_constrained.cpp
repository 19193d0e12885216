#include "decopt/constrained.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace decopt;

namespace {

ProblemInstance two_node(double mu_scale = 1.0) {
  Matrix h = mu_scale * Matrix::Identity(1, 1);
  return make_explicit_quadratic({h, h}, {Vector::Zero(1), Vector::Constant(1, 2.0)});
}

ProblemInstance random_instance(int m, std::uint64_t seed, double mu = 0.5) {
  ProblemSpec s;
  s.m = m;
  s.n = 3;
  s.mu = mu;
  s.L = 1.0;
  s.seed = seed;
  return make_instance(s);
}

}  // namespace

TEST(PenaltyLift, Coefficient) {
  const ProblemInstance p = random_instance(3, 1);
  const LaplacianGraph g = path_graph(3);
  EXPECT_DOUBLE_EQ(penalty_lift(p, g, 0.1, 2.0).penalty_coeff, 40.0);
  EXPECT_DOUBLE_EQ(penalty_lift(p, g, 0.05, 2.0).penalty_coeff, 80.0);
  const PenaltyProblem pp = penalty_lift(p, g, 0.1, 2.0);
  const StackedVector xc = StackedVector::consensus(3, Vector::Constant(3, 0.7));
  EXPECT_NEAR(pp.value(xc), objective(p, xc), 1e-14);
  EXPECT_THROW(penalty_lift(p, g, 0.0, 1.0), InvalidTolerance);
  EXPECT_THROW(penalty_lift(p, g, 0.1, -1.0), InvalidTolerance);
}

TEST(Certificate, ExactSaddleIsZero) {
  const ProblemInstance p = two_node();
  const LaplacianGraph g = path_graph(2);
  const StackedVector xs = StackedVector::consensus(2, Vector::Constant(1, 1.0));
  StackedVector yh(2, 1);
  for (int k = 0; k < 2; ++k) yh.block(k) = p.grad(k, Vector::Constant(1, 1.0));
  const Certificate c = certificate(p, g, xs, &yh);
  EXPECT_NEAR(*c.duality_gap, 0.0, 1e-9);
  EXPECT_NEAR(c.feasibility, 0.0, 1e-15);
  EXPECT_NEAR(*c.f_gap, 0.0, 1e-15);
}

TEST(Certificate, SuboptimalConsensusPoint) {
  const ProblemInstance p = two_node();
  const LaplacianGraph g = path_graph(2);
  const StackedVector x = StackedVector::consensus(2, Vector::Constant(1, 0.3));
  const StackedVector zero(2, 1);
  const Certificate c = certificate(p, g, x, &zero);
  EXPECT_EQ(c.feasibility, 0.0);
  EXPECT_GT(*c.duality_gap, 0.0);
}

TEST(Certificate, OriginalVariablesAgree) {
  const ProblemInstance p = random_instance(4, 3);
  const LaplacianGraph g = star_graph(4);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  StackedVector x(4, 3), y(4, 3);
  for (Eigen::Index i = 0; i < x.data().size(); ++i) {
    x.data()(i) = nd(gen);
    y.data()(i) = nd(gen);
  }
  const StackedVector yh = apply_sqrt_block(sqrt_laplacian(g), y);
  EXPECT_NEAR(*certificate_original(p, g, x, y).duality_gap, *certificate(p, g, x, &yh).duality_gap, 1e-10);
}

TEST(Pstm, SingleNodeIsPlainStm) {
  const ProblemInstance p = random_instance(1, 4, 0.0);
  const LaplacianGraph g = path_graph(1);
  CentralizedNetwork net(g, p.n());
  MethodOptions o;
  o.iterations = 40;
  const MethodResult a = pstm(p, net, o);
  const MethodResult b = run_stm(p, o);
  EXPECT_LE((a.x.data() - b.x.data()).norm(), 1e-12);
  EXPECT_EQ(net.rounds(), 0);
  EXPECT_EQ(a.R_y, 0.0);
}

TEST(Pstm, TwoNodeCertified) {
  const ProblemInstance p = two_node();
  const LaplacianGraph g = path_graph(2);
  for (PenaltyMode mode : {PenaltyMode::composite, PenaltyMode::fused}) {
    CentralizedNetwork net(g, 1);
    MethodOptions o;
    o.eps = 1e-3;
    o.mode = mode;
    const MethodResult r = pstm(p, net, o);
    EXPECT_TRUE(r.success) << to_string(mode);
    EXPECT_LE(*r.cert.f_gap, 1e-3);
    EXPECT_LE(r.cert.feasibility, 1e-3 / r.R_y);
    EXPECT_FALSE(r.inner_budget_exceeded);
  }
}

TEST(Pstm, FeasibilityTransfer) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const ProblemInstance p = random_instance(5, seed, 0.2);
    const LaplacianGraph g = cycle_graph(5);
    CentralizedNetwork net(g, p.n());
    MethodOptions o;
    o.eps = 1e-2;
    o.mode = PenaltyMode::fused;
    const MethodResult r = pstm(p, net, o);
    const PenaltyProblem pp = penalty_lift(p, g, o.eps, r.R_y);
    const double penalized_gap = pp.value(r.x) - p.known_opt->f;
    if (penalized_gap <= o.eps) {
      EXPECT_LE(*r.cert.f_gap, o.eps * 1.1);
      EXPECT_LE(r.cert.feasibility, o.eps / r.R_y * 1.1);
    }
  }
}

TEST(Pstm, RoundsGrowWithSqrtChi) {
  ProblemSpec s;
  s.m = 8;
  s.n = 2;
  s.mu = 0.1;
  s.L = 1.0;
  s.seed = 5;
  s.offset_scale = 0.5;
  s.offset_center = 1.0;
  MethodOptions o;
  o.eps = 1e-3;
  o.stop_on_target = true;
  const LaplacianGraph small = path_graph(8), large = path_graph(32);
  const ProblemInstance p8 = make_instance(s);
  s.m = 32;
  const ProblemInstance p32 = make_instance(s);
  CentralizedNetwork a(small, 2), b(large, 2);
  ASSERT_TRUE(pstm(p8, a, o).success);
  ASSERT_TRUE(pstm(p32, b, o).success);
  const double ratio = static_cast<double>(b.rounds()) / a.rounds();
  const double expected = std::sqrt(large.chi() / small.chi());
  EXPECT_GT(ratio, expected / 2.0);
  EXPECT_LT(ratio, expected * 2.0);
}

TEST(Pbstm, ZeroNoiseMatchesPstm) {
  const ProblemInstance p = random_instance(4, 7);
  const LaplacianGraph g = path_graph(4);
  MethodOptions o;
  o.eps = 1e-2;
  CentralizedNetwork a(g, p.n()), b(g, p.n());
  StochasticOracleConfig cfg;
  const MethodResult r1 = pstm(p, a, o);
  const MethodResult r2 = pbstm(p, b, cfg, o);
  EXPECT_EQ(r1.x.data(), r2.x.data());
  EXPECT_EQ(a.rounds(), b.rounds());
}

TEST(Pdstm, TwoNodeCertified) {
  const ProblemInstance p = two_node();
  const LaplacianGraph g = path_graph(2);
  CentralizedNetwork net(g, 1);
  MethodOptions o;
  o.eps = 1e-3;
  o.n_constant = 2.0 * std::sqrt(2.0);
  const MethodResult r = pdstm(p, net, o);
  EXPECT_LE(*r.cert.duality_gap, 1e-3);
  EXPECT_LE(r.cert.feasibility, 1e-3 / r.R_y);
  EXPECT_NEAR(r.x.mean_block()(0), 1.0, 1e-2);
}

TEST(Pdstm, EqualOffsetsAreImmediatelyOptimal) {
  Matrix h = Matrix::Identity(2, 2);
  Vector b(2);
  b << 0.5, -1.0;
  const ProblemInstance p = make_explicit_quadratic({h, 2.0 * h, 0.5 * h}, {b, b, b});
  const LaplacianGraph g = path_graph(3);
  CentralizedNetwork net(g, 2);
  MethodOptions o;
  o.iterations = 1;
  const MethodResult r = pdstm(p, net, o);
  for (int k = 0; k < 3; ++k) EXPECT_LE((r.x.block(k) - b).norm(), 1e-10);
  EXPECT_NEAR(*r.cert.duality_gap, 0.0, 1e-10);
  EXPECT_NEAR(r.cert.feasibility, 0.0, 1e-10);
}

TEST(Pdstm, WeakDualityUpToInfeasibility) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const ProblemInstance p = random_instance(6, seed);
    const LaplacianGraph g = star_graph(6);
    CentralizedNetwork net(g, p.n());
    MethodOptions o;
    o.eps = 1e-3;
    o.iterations = 30;
    const MethodResult r = pdstm(p, net, o);
    // F(x) + Psi(y) >= F(x) - F* - R_y ||sqrt(W) x|| >= -R_y ||sqrt(W) x||.
    EXPECT_GE(*r.cert.duality_gap, -r.R_y * r.cert.feasibility - 1e-9);
  }
}

TEST(Pdstm, DualIteratesStayInRange) {
  const ProblemInstance p = random_instance(5, 9);
  const LaplacianGraph g = cycle_graph(5);
  CentralizedNetwork net(g, p.n());
  MethodOptions o;
  o.iterations = 50;
  o.record_iterates = true;
  const MethodResult r = pdstm(p, net, o);
  ASSERT_EQ(r.iterates.size(), 50u);
  for (const Vector& y : r.iterates) {
    const StackedVector ys(5, p.n(), y);
    EXPECT_LE(ys.mean_block().norm() * std::sqrt(5.0), 1e-9 * std::max(1.0, y.norm()));
  }
}

TEST(Pdstm, NeedsStrongConvexity) {
  const ProblemInstance p = random_instance(3, 1, 0.0);
  const LaplacianGraph g = path_graph(3);
  CentralizedNetwork net(g, p.n());
  EXPECT_THROW(pdstm(p, net), NotStronglyConvex);
}

TEST(Spdstm, ZeroNoiseMatchesPdstm) {
  const ProblemInstance p = random_instance(4, 2);
  const LaplacianGraph g = path_graph(4);
  MethodOptions o;
  o.eps = 1e-2;
  CentralizedNetwork a(g, p.n()), b(g, p.n());
  const MethodResult r1 = pdstm(p, a, o);
  const MethodResult r2 = spdstm(p, b, StochasticOracleConfig{}, o);
  EXPECT_EQ(r1.x.data(), r2.x.data());
  EXPECT_EQ(r1.y_hat->data(), r2.y_hat->data());
}

TEST(Spdstm, BatchSizesFollowRule) {
  const ProblemInstance p = random_instance(4, 2);
  const LaplacianGraph g = path_graph(4);
  StochasticOracleConfig cfg;
  cfg.sigma_phi = 1.0;
  MethodOptions o;
  o.eps = 1e-2;
  CentralizedNetwork net(g, p.n());
  const MethodResult r = spdstm(p, net, cfg, o);
  const DualConstants dc = dual_constants(p, g, cfg);
  const int N = r.iterations;
  for (int k = 0; k < N; ++k) {
    const long expected = batch_size_rule(k, std::sqrt(dc.sigma_psi_sq), r.schedule.alphas[k + 1],
                                          r.schedule.As[k + 1], 0.0, 4 * o.eps, N, o.beta, 1.0);
    EXPECT_EQ(r.schedule.batch_sizes[k + 1], expected);
  }
}

TEST(DualSc, ConsensusInstanceReturnsImmediately) {
  Matrix h = Matrix::Identity(1, 1);
  const ProblemInstance p = make_explicit_quadratic({h, h, h}, {Vector::Ones(1), Vector::Ones(1), Vector::Ones(1)});
  const LaplacianGraph g = path_graph(3);
  CentralizedNetwork net(g, 1);
  const MethodResult r = dual_sc_solve(p, net);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_NEAR(*r.grad_norm, 0.0, 1e-15);
}

TEST(DualSc, TwoNodeTargets) {
  const ProblemInstance p = two_node();
  const LaplacianGraph g = path_graph(2);
  CentralizedNetwork net(g, 1);
  MethodOptions o;
  o.eps = 1e-4;
  const MethodResult r = dual_sc_solve(p, net, o);
  EXPECT_LE(*r.grad_norm, o.eps / r.R_y);
  EXPECT_LE(*r.cert.duality_gap, o.eps);
  EXPECT_LE(*r.cert.f_gap, o.eps);
  EXPECT_TRUE(r.success);
}

TEST(DualSc, BudgetExhaustionThrows) {
  const ProblemInstance p = random_instance(4, 3);
  const LaplacianGraph g = path_graph(4);
  CentralizedNetwork net(g, p.n());
  MethodOptions o;
  o.eps = 1e-6;
  o.iterations = 2;
  EXPECT_THROW(dual_sc_solve(p, net, o), NotConverged);
}
