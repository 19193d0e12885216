#pragma once

// End-to-end acceptance checks. Each returns a pass flag and a one-line
// summary of what was measured.

#include "decopt/bench.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace decopt::acceptance {

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline Outcome start(int id, std::string name) {
  Outcome o;
  o.id = id;
  o.name = std::move(name);
  return o;
}

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

}  // namespace detail

// 1/N^2 decay of plain STM on a smooth, not strongly convex quadratic.
inline Outcome stm_sublinear_rate() {
  Outcome o = detail::start(1, "stm 1/N^2 law");
  ProblemSpec s;
  s.m = 1;
  s.n = 50;
  s.mu = 0.0;
  s.L = 1.0;
  s.seed = 11;
  s.rotate = false;
  s.offset_scale = 0.0;
  s.offset_center = 1.0;
  const ProblemInstance p = make_instance(s);
  std::vector<std::pair<double, double>> pts;
  for (int N = 16; N <= 1024; N *= 2) {
    MethodOptions mo;
    mo.iterations = N;
    mo.record_trace = false;
    const MethodResult r = run_stm(p, mo);
    pts.emplace_back(N, *r.cert.f_gap);
  }
  const RateFit f = rate_fit(pts);
  o.pass = f.slope <= -1.9 && f.r_squared >= 0.98;
  o.detail = "slope " + detail::fmt(f.slope) + ", r^2 " + detail::fmt(f.r_squared);
  return o;
}

// Iterations to 1e-8 grow like sqrt(L/mu).
inline Outcome stm_linear_rate() {
  Outcome o = detail::start(2, "stm linear rate");
  std::vector<std::pair<double, double>> pts;
  std::string its;
  for (double kappa : {1e1, 1e2, 1e3, 1e4}) {
    ProblemSpec s;
    s.m = 1;
    s.n = 20;
    s.mu = 1.0;
    s.L = kappa;
    s.seed = 7;
    const ProblemInstance p = make_instance(s);
    MethodOptions mo;
    mo.eps = 1e-8;
    mo.stop_on_target = true;
    mo.iterations = 1000000;
    mo.record_trace = false;
    const MethodResult r = run_stm(p, mo);
    pts.emplace_back(std::sqrt(kappa), r.iterations);
    its += (its.empty() ? "" : "/") + std::to_string(r.iterations);
    if (!r.success) {
      o.detail = "target not reached at L/mu " + detail::fmt(kappa);
      return o;
    }
  }
  const RateFit f = rate_fit(pts);
  o.pass = f.slope >= 0.85 && f.slope <= 1.15;
  o.detail = "iterations " + its + ", slope " + detail::fmt(f.slope);
  return o;
}

/// Exact saddle point of a two-node quadratic from the KKT system
/// H1 (x1 - b1) + l = 0, H2 (x2 - b2) - l = 0, x1 = x2.
inline std::pair<Vector, Vector> two_node_saddle(const ProblemInstance& p) {
  const int n = p.n();
  const auto& q1 = std::get<QuadraticComponent>(p.component(0));
  const auto& q2 = std::get<QuadraticComponent>(p.component(1));
  Matrix K = Matrix::Zero(3 * n, 3 * n);
  Vector rhs = Vector::Zero(3 * n);
  K.block(0, 0, n, n) = q1.H;
  K.block(0, 2 * n, n, n) = Matrix::Identity(n, n);
  K.block(n, n, n, n) = q2.H;
  K.block(n, 2 * n, n, n) = -Matrix::Identity(n, n);
  K.block(2 * n, 0, n, n) = Matrix::Identity(n, n);
  K.block(2 * n, n, n, n) = -Matrix::Identity(n, n);
  rhs.segment(0, n) = q1.H * q1.b;
  rhs.segment(n, n) = q2.H * q2.b;
  const Vector sol = K.fullPivLu().solve(rhs);
  return {sol.segment(0, n), sol.segment(2 * n, n)};
}

// PDSTM certificate on small graphs plus the exact two-node saddle.
inline Outcome pdstm_certificate() {
  Outcome o = detail::start(3, "pdstm certificate");
  ProblemSpec s;
  s.n = 3;
  s.mu = 0.5;
  s.L = 1.0;
  s.seed = 3;
  const double eps = 1e-3;
  int runs = 0;
  double worst = 0.0;
  for (const char* topo : {"path", "star", "complete"}) {
    for (int m : {2, 4, 8, 16}) {
      s.m = m;
      const ProblemInstance p = make_instance(s);
      GraphSpec gs;
      gs.topology = topo;
      gs.m = m;
      const LaplacianGraph g = make_graph(gs);
      MethodOptions mo;
      mo.eps = eps;
      mo.n_constant = 2.0 * std::sqrt(2.0);
      mo.record_trace = false;
      CentralizedNetwork net(g, p.n());
      const MethodResult r = pdstm(p, net, mo);
      ++runs;
      const double gap = *r.cert.duality_gap;
      worst = std::max({worst, gap / eps, r.cert.feasibility * r.R_y / eps});
      if (!(gap <= eps && r.cert.feasibility <= eps / r.R_y)) {
        o.detail = std::string(topo) + " m=" + std::to_string(m) + ": gap " + detail::fmt(gap) + ", feasibility " +
                   detail::fmt(r.cert.feasibility) + " vs " + detail::fmt(eps / r.R_y);
        return o;
      }
    }
  }
  s.m = 2;
  const ProblemInstance p = make_instance(s);
  const LaplacianGraph g = path_graph(2);
  const auto [x_star, lambda] = two_node_saddle(p);
  (void)lambda;
  const double x_err = (x_star - p.known_opt->x).cwiseAbs().maxCoeff();
  StackedVector xs = StackedVector::consensus(2, x_star);
  StackedVector yh(2, p.n());
  for (int k = 0; k < 2; ++k) yh.block(k) = p.grad(k, x_star);
  const Certificate c = certificate(p, g, xs, &yh);
  const double saddle_gap = std::abs(*c.duality_gap);
  o.pass = x_err <= 1e-9 && saddle_gap <= 1e-9;
  o.detail = std::to_string(runs) + " runs certified (worst ratio " + detail::fmt(worst) +
             "), saddle error " + detail::fmt(x_err, 3) + ", saddle gap " + detail::fmt(saddle_gap, 3);
  return o;
}

// Central differences of the dual function against its analytic gradient.
inline Outcome dual_gradient_identity() {
  Outcome o = detail::start(4, "dual gradient identity");
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> mdist(2, 6), ndist(1, 4), tdist(0, 3);
  std::normal_distribution<double> nd;
  const char* topos[] = {"path", "star", "complete", "cycle"};
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    ProblemSpec s;
    s.m = mdist(gen);
    s.n = ndist(gen);
    s.mu = 0.2;
    s.L = 2.0;
    s.seed = 100 + t;
    s.family = t % 5 == 4 ? "logistic" : "quadratic";
    s.samples = 6;
    const ProblemInstance p = make_instance(s);
    GraphSpec gs;
    gs.topology = topos[tdist(gen)];
    gs.m = s.m;
    const LaplacianGraph g = make_graph(gs);
    const Matrix sw = sqrt_laplacian(g);
    StackedVector y(s.m, s.n);
    for (Eigen::Index i = 0; i < y.data().size(); ++i) y.data()(i) = nd(gen);
    auto psi = [&](const StackedVector& yy) {
      const StackedVector yh = apply_sqrt_block(sw, yy);
      double v = 0.0;
      for (int k = 0; k < s.m; ++k) v += conjugate_value(p, k, yh.block(k));
      return v;
    };
    const StackedVector grad = dual_gradient_original(p, sw, y);
    Vector fd(y.data().size());
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      StackedVector yp = y, ym = y;
      yp.data()(i) += h;
      ym.data()(i) -= h;
      fd(i) = (psi(yp) - psi(ym)) / (2.0 * h);
    }
    const double rel = (fd - grad.data()).norm() / std::max(grad.data().norm(), 1e-12);
    worst = std::max(worst, rel);
  }
  o.pass = worst <= 1e-5;
  o.detail = "50 points, worst relative error " + detail::fmt(worst, 3);
  return o;
}

/// SimulatedNetwork double whose nodes also read a node two hops away.
class TwoHopNetwork final : public SimulatedNetwork {
 public:
  using SimulatedNetwork::SimulatedNetwork;

 protected:
  void compute(int k, Vector& out) override {
    SimulatedNetwork::compute(k, out);
    for (int j : graph().neighbors(k))
      for (int i : graph().neighbors(j))
        if (i != k && !graph().adjacent(k, i)) {
          out += 0.0 * peek(k, i);
          return;
        }
  }
};

// Centralized and simulated runs coincide; the audit catches a 2-hop read.
inline Outcome decentralized_equivalence() {
  Outcome o = detail::start(5, "decentralized equivalence");
  const Method methods[] = {Method::stm,   Method::bstm,   Method::pstm,   Method::pbstm,
                            Method::pdstm, Method::spdstm, Method::dual_sc};
  double worst = 0.0;
  int checks = 0;
  for (const char* topo : {"path", "star", "cycle"}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      ProblemSpec s;
      s.m = 5;
      s.n = 2;
      s.mu = 0.3;
      s.L = 1.0;
      s.seed = seed;
      const ProblemInstance p = make_instance(s);
      GraphSpec gs;
      gs.topology = topo;
      gs.m = s.m;
      const LaplacianGraph g = make_graph(gs);
      StochasticOracleConfig cfg;
      cfg.sigma = 0.5;
      cfg.sigma_phi = 0.5;
      for (Method m : methods) {
        MethodOptions mo;
        mo.eps = 1e-2;
        mo.iterations = m == Method::dual_sc ? 0 : 25;
        for (PenaltyMode mode : {PenaltyMode::composite, PenaltyMode::fused}) {
          if (mode == PenaltyMode::fused && m != Method::pstm && m != Method::pbstm) continue;
          mo.mode = mode;
          double dev;
          try {
            dev = equivalence_check(m, p, g, cfg, mo, seed, seed);
          } catch (const TopologyViolation& e) {
            o.detail = std::string(to_string(m)) + " on " + topo + ": " + e.what();
            return o;
          }
          worst = std::max(worst, dev);
          ++checks;
        }
      }
    }
  }
  const LaplacianGraph g = path_graph(5);
  TwoHopNetwork bad(g, 2);
  Vector in = Vector::Ones(10), out(10);
  bad.mix(in, out);
  const bool control_caught = !audit_locality(bad.access_log(), g);
  o.pass = worst <= 1e-12 && control_caught;
  o.detail = std::to_string(checks) + " comparisons, worst deviation " + detail::fmt(worst, 3) +
             (control_caught ? ", negative control flagged" : ", negative control NOT flagged");
  return o;
}

// Penalty-method rounds grow like sqrt(chi) along path graphs.
inline Outcome sqrt_chi_rounds() {
  Outcome o = detail::start(6, "sqrt(chi) communication scaling");
  std::vector<std::pair<double, double>> pts;
  std::string rounds;
  for (int m : {4, 8, 16, 32, 64}) {
    ProblemSpec s;
    s.m = m;
    s.n = 2;
    s.mu = 0.1;
    s.L = 1.0;
    s.seed = 5;
    s.offset_scale = 0.5;
    s.offset_center = 1.0;
    const ProblemInstance p = make_instance(s);
    const LaplacianGraph g = path_graph(m);
    MethodOptions mo;
    mo.eps = 1e-3;
    mo.mode = PenaltyMode::composite;
    mo.stop_on_target = true;
    mo.record_trace = false;
    CentralizedNetwork net(g, p.n());
    const MethodResult r = pstm(p, net, mo);
    if (!r.success || r.inner_budget_exceeded) {
      o.detail = "m=" + std::to_string(m) + " did not reach the target";
      return o;
    }
    pts.emplace_back(g.chi(), static_cast<double>(net.rounds()));
    rounds += (rounds.empty() ? "" : "/") + std::to_string(net.rounds());
  }
  const RateFit f = rate_fit(pts);
  o.pass = f.slope >= 0.4 && f.slope <= 0.6;
  o.detail = "rounds " + rounds + ", exponent " + detail::fmt(f.slope);
  return o;
}

// Success rate and oracle-call budget of the stochastic methods.
inline Outcome stochastic_success() {
  Outcome o = detail::start(7, "stochastic success rates");
  const double eps = 1e-2, beta = 0.1;
  const int seeds = 20;
  ProblemSpec s;
  s.m = 4;
  s.n = 3;
  s.mu = 0.5;
  s.L = 1.0;
  s.seed = 3;
  const ProblemInstance p = make_instance(s);
  const LaplacianGraph g = path_graph(s.m);
  const double m = s.m;
  bool all = true;
  std::string summary;
  for (Method method : {Method::bstm, Method::pbstm, Method::spdstm}) {
    int ok = 0;
    double worst_ratio = 0.0;
    for (int seed = 1; seed <= seeds; ++seed) {
      StochasticOracleConfig cfg;
      cfg.sigma = method == Method::spdstm ? 0.0 : 1.0;
      cfg.sigma_phi = method == Method::spdstm ? 1.0 : 0.0;
      cfg.master_seed = static_cast<std::uint64_t>(seed);
      MethodOptions mo;
      mo.eps = eps;
      mo.beta = beta;
      mo.record_trace = false;
      if (method == Method::spdstm) mo.n_constant = 2.0 * std::sqrt(2.0);
      const Execution ex = run_centralized(method, p, g, cfg, mo);
      const MethodResult& r = ex.result;
      ok += r.success ? 1 : 0;
      const double calls = static_cast<double>(*std::max_element(ex.oracle_calls.begin(), ex.oracle_calls.end()));
      const int N = r.iterations;
      const double lg = std::log(N / beta);
      double bound = 0.0;
      if (method == Method::bstm) {
        const double sig = cfg.sigma / std::sqrt(m);
        const double R2 = p.known_opt->x.squaredNorm();
        bound = N + sig * sig * R2 * lg / (eps * eps);
      } else if (method == Method::pbstm) {
        const double sig = cfg.sigma / std::sqrt(m);
        const double R2 = m * p.known_opt->x.squaredNorm();
        bound = std::max(sig * sig * R2 * lg / (eps * eps), std::sqrt(p.L / m * R2 / eps));
      } else {
        const DualConstants dc = dual_constants(p, g, cfg);
        const double RG = m * dc.R_y, eG = m * eps;
        bound = std::max(dc.sigma_psi_sq * RG * RG * lg / (eG * eG), static_cast<double>(N));
      }
      worst_ratio = std::max(worst_ratio, calls / bound);
    }
    const bool pass = ok >= 18 && worst_ratio <= 4.0;
    all = all && pass;
    summary += std::string(summary.empty() ? "" : "; ") + to_string(method) + " " + std::to_string(ok) + "/20, calls " +
               detail::fmt(worst_ratio, 3) + "x bound";
  }
  o.pass = all;
  o.detail = summary;
  return o;
}

// Variance of a batch mean shrinks like 1/r.
inline Outcome batch_variance() {
  Outcome o = detail::start(8, "batch variance law");
  const int n = 5, reps = 10000;
  StochasticOracleConfig cfg;
  cfg.sigma = 1.0;
  cfg.master_seed = 99;
  const ProblemInstance p = make_quadratic_instance(4, 1, n, 0.5, 1.0);
  const Vector x = Vector::Constant(n, 0.3);
  const Vector exact = primal_grad(p, 0, x);
  auto oracle = [&](const Vector& at, Lineage lin) { return stochastic_primal_grad(p, 0, at, cfg, lin); };
  auto variance = [&](long r, std::uint64_t offset) {
    double acc = 0.0;
    for (int t = 0; t < reps; ++t)
      acc += (batched_grad(oracle, x, r, offset + static_cast<std::uint64_t>(t)) - exact).squaredNorm();
    return acc / reps;
  };
  const double v1 = variance(1, 0);
  const double v16 = variance(16, 1000000);
  const double ratio = v16 / v1 * 16.0;
  o.pass = std::abs(ratio - 1.0) <= 0.2;
  o.detail = "var(r=1) " + detail::fmt(v1) + ", var(r=16) " + detail::fmt(v16) + ", 16*ratio " + detail::fmt(ratio);
  return o;
}

// Strongly convex dual route: gradient-norm target and sqrt(L/mu) iterations.
inline Outcome dual_strongly_convex() {
  Outcome o = detail::start(9, "strongly convex dual route");
  const double eps = 1e-3;
  std::vector<int> its;
  std::vector<double> cond;
  std::string summary;
  for (double kappa : {8.0, 32.0, 128.0}) {
    ProblemSpec s;
    s.m = 4;
    s.n = 3;
    s.mu = 1.0;
    s.L = kappa;
    s.seed = 21;
    const ProblemInstance p = make_instance(s);
    const LaplacianGraph g = path_graph(s.m);
    MethodOptions mo;
    mo.eps = eps;
    mo.record_trace = false;
    CentralizedNetwork net(g, p.n());
    MethodResult r;
    try {
      r = dual_sc_solve(p, net, mo);
    } catch (const NotConverged& e) {
      o.detail = "L/mu " + detail::fmt(kappa) + ": " + e.what();
      return o;
    }
    const double target = eps / r.R_y;
    if (!(*r.grad_norm <= target) || !(*r.cert.duality_gap <= eps) || !(r.cert.f_gap && *r.cert.f_gap <= eps)) {
      o.detail = "L/mu " + detail::fmt(kappa) + ": grad norm " + detail::fmt(*r.grad_norm) + " vs " +
                 detail::fmt(target) + ", gap bound " + detail::fmt(*r.cert.duality_gap);
      return o;
    }
    const DualConstants dc = dual_constants(p, g, {});
    its.push_back(r.iterations);
    cond.push_back(std::sqrt(dc.L_psi / dc.mu_psi));
    summary += (summary.empty() ? "" : "/") + std::to_string(r.iterations);
  }
  double worst = 0.0;
  for (std::size_t i = 1; i < its.size(); ++i) {
    const double measured = static_cast<double>(its[i]) / its[i - 1];
    const double expected = cond[i] / cond[i - 1];
    worst = std::max(worst, std::abs(measured / expected - 1.0));
  }
  o.pass = worst <= 0.25;
  o.detail = "iterations " + summary + ", worst deviation from sqrt scaling " + detail::fmt(100.0 * worst, 3) + "%";
  return o;
}

// Every generated step satisfies its defining quadratic.
inline Outcome schedule_identity() {
  Outcome o = detail::start(10, "schedule identity");
  int steps = 0;
  double worst = 0.0;
  for (Radicand rad : {Radicand::printed, Radicand::squared})
    for (double L : {0.1, 1.0, 10.0, 1000.0})
      for (double ratio : {0.0, 1e-4, 1e-2, 0.5, 1.0}) {
        const int N = 250;
        const double mu = ratio * L;
        const StmSchedule sc = make_schedule(L, mu, N, rad);
        for (int k = 0; k < N; ++k) {
          worst = std::max(worst, schedule_residual(sc.As[k], sc.alphas[k + 1], L, mu, rad));
          ++steps;
        }
      }
  o.pass = steps >= 10000 && worst <= 1e-10;
  o.detail = std::to_string(steps) + " steps, worst residual " + detail::fmt(worst, 3);
  return o;
}

// Equal configs give equal report bytes, independent of thread count.
inline Outcome determinism() {
  Outcome o = detail::start(11, "determinism");
  const char* yaml = R"(problem: {family: quadratic, n: 3, mu: 0.5, L: 1.0, seed: 4}
graph: {topology: star, m: 6}
method: {name: pbstm, eps: 0.05, iterations: 20}
stochastic: {sigma: 1.0}
seeds: [1, 2, 3, 4]
)";
  bool same = true;
  for (const char* name : {"pbstm", "spdstm", "pdstm"}) {
    ExperimentConfig c = parse_config_string(yaml);
    c.method = *parse_method(name);
    c.stochastic.sigma_phi = 1.0;
    c.threads = 1;
    const RunOutput a = run_experiment(c);
    const RunOutput b = run_experiment(c);
    c.threads = 4;
    const RunOutput d = run_experiment(c);
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      const std::string ra = dump_report(a.seeds[i].report);
      same = same && ra == dump_report(b.seeds[i].report) && ra == dump_report(d.seeds[i].report);
      same = same && a.seeds[i].report.error.empty();
      same = same && dump_report(run_seed(c, c.seeds[i], 4).report) == ra;
    }
  }
  o.pass = same;
  o.detail = same ? "reports identical across repeats and 1/4 threads" : "reports differ";
  return o;
}

inline std::vector<std::function<Outcome()>> criteria() {
  return {stm_sublinear_rate, stm_linear_rate,  pdstm_certificate, dual_gradient_identity,
          decentralized_equivalence, sqrt_chi_rounds, stochastic_success, batch_variance,
          dual_strongly_convex, schedule_identity, determinism};
}

/// Runs every criterion, printing one line each. Returns the failure count.
inline int run_all(std::ostream& os) {
  int failures = 0;
  const auto all = criteria();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = all[i]();
    } catch (const std::exception& e) {
      r.id = static_cast<int>(i) + 1;
      r.name = "criterion";
      r.pass = false;
      r.detail = std::string("threw ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += r.pass ? 0 : 1;
    os << (r.pass ? "PASS" : "FAIL") << " [" << r.id << "] " << r.name << ": " << r.detail << " ("
       << detail::fmt(r.seconds, 3) << " s)" << std::endl;
  }
  return failures;
}

}  // namespace decopt::acceptance
