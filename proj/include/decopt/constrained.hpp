#pragma once

// Consensus-constrained methods: penalty-based primal methods and the dual
// (change-of-variables) methods, plus primal-dual certificates.

#include "decopt/common.hpp"
#include "decopt/graph.hpp"
#include "decopt/network.hpp"
#include "decopt/problem.hpp"
#include "decopt/stm.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace decopt {

enum class PenaltyMode { composite, fused };

inline const char* to_string(PenaltyMode m) { return m == PenaltyMode::composite ? "composite" : "fused"; }

/// F(x) + penalty_coeff * x'Wx with penalty_coeff = R_y^2 / eps.
struct PenaltyProblem {
  const ProblemInstance* base = nullptr;
  const LaplacianGraph* graph = nullptr;
  double eps = 0.0;
  double R_y = 0.0;
  double penalty_coeff = 0.0;

  double smoothness() const { return base->L / base->m() + 2.0 * penalty_coeff * graph->lambda_max(); }
  double value(const StackedVector& x) const {
    const double quad = x.data().dot(apply_block(*graph, x).data());
    return objective(*base, x) + penalty_coeff * quad;
  }
};

inline PenaltyProblem penalty_lift(const ProblemInstance& p, const LaplacianGraph& g, double eps, double R_y) {
  if (!(eps > 0.0)) throw InvalidTolerance("eps must be positive");
  if (!(R_y >= 0.0) || !std::isfinite(R_y)) throw InvalidTolerance("R_y must be finite and nonnegative");
  if (g.m() != p.m()) throw DimensionMismatch("graph and problem disagree on m");
  return PenaltyProblem{&p, &g, eps, R_y, R_y * R_y / eps};
}

struct Certificate {
  std::optional<double> duality_gap;
  double feasibility = 0.0;
  std::optional<double> f_gap;
};

/// sum_k phi_k(lam_k) over the blocks of y_hat = sqrt(W) y; this is the dual
/// of sum_k f_k, so it is m times the dual of F.
inline double dual_value(const ProblemInstance& p, const StackedVector& y_hat) {
  double acc = 0.0;
  for (int k = 0; k < p.m(); ++k) acc += conjugate_value(p, k, Vector(y_hat.block(k)));
  return acc;
}

/// duality_gap = F(x) + dual_value(y_hat)/m, feasibility = ||sqrt(W) x||.
inline Certificate certificate(const ProblemInstance& p, const LaplacianGraph& g, const StackedVector& x,
                               const StackedVector* y_hat = nullptr) {
  if (x.m() != p.m() || x.n() != p.n()) throw DimensionMismatch("primal point has the wrong shape");
  Certificate c;
  const double fx = objective(p, x);
  c.feasibility = consensus_residual(g, x);
  if (p.known_opt) c.f_gap = fx - p.known_opt->f;
  if (y_hat) {
    if (y_hat->m() != p.m() || y_hat->n() != p.n()) throw DimensionMismatch("dual point has the wrong shape");
    c.duality_gap = fx + dual_value(p, *y_hat) / p.m();
  }
  return c;
}

/// Certificate for a dual point given in the original variables, via a dense
/// sqrt(W). Validation only.
inline Certificate certificate_original(const ProblemInstance& p, const LaplacianGraph& g, const StackedVector& x,
                                        const StackedVector& y) {
  const StackedVector y_hat = apply_sqrt_block(sqrt_laplacian(g), y);
  return certificate(p, g, x, &y_hat);
}

/// Gradient of y -> dual_value(sqrt(W) y), i.e. sqrt(W) x(sqrt(W) y). Validation only.
inline StackedVector dual_gradient_original(const ProblemInstance& p, const Matrix& sqrt_w, const StackedVector& y) {
  const StackedVector y_hat = apply_sqrt_block(sqrt_w, y);
  StackedVector x(p.m(), p.n());
  for (int k = 0; k < p.m(); ++k) x.block(k) = conjugate_argmax(p, k, Vector(y_hat.block(k)));
  return apply_sqrt_block(sqrt_w, x);
}

struct MethodOptions {
  double eps = 1e-3;
  double beta = 0.1;
  double n_constant = 1.0;
  double batch_constant = 1.0;
  int iterations = 0;  // 0: use the iteration bound
  int max_iterations = 100000;
  int inner_budget = 100000;
  double dual_budget_factor = 2.0;  // dual_sc_solve budget multiplier
  bool stop_on_target = false;
  bool record_trace = true;
  bool record_iterates = false;
  PenaltyMode mode = PenaltyMode::composite;
  double R_safety = 2.0;
  std::optional<double> R_x;  // primal radius when the optimum is unknown
  StmOptions stm;
};

struct MethodResult {
  std::string method;
  StackedVector x;                     // primal output
  std::optional<StackedVector> y_hat;  // dual output in the variables sqrt(W) y
  Certificate cert;
  std::optional<double> grad_norm;
  int iterations = 0;
  double R_y = 0.0;
  double eps = 0.0;
  bool inner_budget_exceeded = false;
  long inner_iterations = 0;
  bool success = false;
  StmSchedule schedule;
  std::vector<TraceRow> trace;
  std::vector<Vector> iterates;  // primal output after each iteration, when recorded
};

namespace detail {

inline double primal_radius_sq(const ProblemInstance& p, const MethodOptions& o) {
  if (p.known_opt) return static_cast<double>(p.m()) * p.known_opt->x.squaredNorm();
  if (o.R_x) return *o.R_x * *o.R_x;
  throw InvalidArgument("primal radius unknown: set R_x for instances without a known optimum");
}

inline double feasibility_target(double eps, double R_y) {
  return R_y > 0.0 ? eps / R_y : std::numeric_limits<double>::infinity();
}

inline bool primal_certified(const Certificate& c, double eps, double R_y) {
  return c.f_gap && *c.f_gap <= eps && c.feasibility <= feasibility_target(eps, R_y);
}

inline bool dual_certified(const Certificate& c, double eps, double R_y) {
  return c.duality_gap && *c.duality_gap <= eps && c.feasibility <= feasibility_target(eps, R_y);
}

inline double local_gap(const ProblemInstance& p, const StackedVector& x) {
  return p.known_opt ? objective(p, x) - p.known_opt->f : std::numeric_limits<double>::quiet_NaN();
}

// Node k writes grad f_k(x_k)/m (plus batch-mean noise when r > 0) into its block.
inline void node_primal_grads(const ProblemInstance& p, Network& net, const Vector& x, Vector& g,
                              const StochasticOracleConfig* cfg, long r, std::uint64_t iter) {
  const int n = p.n();
  g.resize(x.size());
  net.for_each_node([&](int k) {
    const Vector xk = x.segment(static_cast<Eigen::Index>(k) * n, n);
    Vector gk = p.grad(k, xk);
    if (cfg) {
      if (cfg->sigma > 0.0) {
        Vector noise = Vector::Zero(n);
        for (long i = 0; i < r; ++i)
          noise += gaussian_noise(stream_key(cfg->master_seed, StreamDomain::primal, static_cast<std::uint64_t>(k),
                                             Lineage{iter, static_cast<std::uint64_t>(i)}),
                                  n, cfg->sigma);
        gk += noise / static_cast<double>(r);
      }
      if (cfg->delta_bias != 0.0) gk.array() += cfg->delta_bias / std::sqrt(static_cast<double>(n));
    }
    g.segment(static_cast<Eigen::Index>(k) * n, n) = gk / static_cast<double>(p.m());
    net.add_oracle_calls(k, cfg ? r : 1);
  });
}

// Node k writes its conjugate response at lam_k (batch mean when r > 0).
inline void node_conjugate(const ProblemInstance& p, Network& net, const Vector& lam, Vector& x,
                           const StochasticOracleConfig* cfg, long r, std::uint64_t iter) {
  const int n = p.n();
  x.resize(lam.size());
  net.for_each_node([&](int k) {
    const Vector lk = lam.segment(static_cast<Eigen::Index>(k) * n, n);
    Vector xk = conjugate_argmax(p, k, lk);
    if (cfg && cfg->sigma_phi > 0.0) {
      Vector noise = Vector::Zero(n);
      for (long i = 0; i < r; ++i)
        noise += gaussian_noise(stream_key(cfg->master_seed, StreamDomain::dual, static_cast<std::uint64_t>(k),
                                           Lineage{iter, static_cast<std::uint64_t>(i)}),
                                n, cfg->sigma_phi);
      xk += noise / static_cast<double>(r);
    }
    x.segment(static_cast<Eigen::Index>(k) * n, n) = xk;
    net.add_oracle_calls(k, cfg ? r : 1);
  });
}

inline void check_shapes(const ProblemInstance& p, const Network& net) {
  if (net.m() != p.m() || net.n() != p.n()) throw DimensionMismatch("network shape differs from the problem");
}

// PSTM / PBSTM driver; cfg == nullptr means deterministic.
inline MethodResult penalty_method(const std::string& name, const ProblemInstance& p, Network& net,
                                   const MethodOptions& o, const StochasticOracleConfig* cfg) {
  check_shapes(p, net);
  const LaplacianGraph& g = net.graph();
  const double R_y = dual_radius(p, g, o.R_safety);
  const PenaltyProblem pp = penalty_lift(p, g, o.eps, R_y);
  const double m = p.m();
  const double L_F = p.L / m;
  const double mu_F = p.mu / m;
  const double R2 = primal_radius_sq(p, o);
  const double c = pp.penalty_coeff;
  const bool fused = o.mode == PenaltyMode::fused;
  const double L_method = fused ? pp.smoothness() : L_F;
  const int N = o.iterations > 0 ? o.iterations : stm_iteration_bound(L_method, mu_F, R2, o.eps, o.n_constant, o.max_iterations);
  // Composite inner accuracy with L_h = 2 c lambda_max.
  const double L_h = 2.0 * c * g.lambda_max();
  const double inner_tol =
      L_h > 0.0 ? std::max(std::pow(o.eps, 3) / (L_F * L_h * L_h * R2 * R2), 1e-14) : 1.0;
  const double sigma_F = cfg ? cfg->sigma / std::sqrt(m) : 0.0;

  MethodResult res;
  res.method = name;
  res.R_y = R_y;
  res.eps = o.eps;
  res.schedule.L = L_method;
  res.schedule.mu = mu_F;
  const Vector x0 = Vector::Zero(static_cast<Eigen::Index>(p.m()) * p.n());
  StmIterate s = stm_start(x0);
  CompositeHistory hist(x0);
  Vector grad(x0.size()), wx(x0.size());
  auto apply_w = [&](const Vector& in, Vector& out) { net.mix(in, out); };
  const double initial = local_gap(p, StackedVector(p.m(), p.n(), x0));
  for (int k = 0; k < N; ++k) {
    long r = 1;
    double gnorm = 0.0;
    const StepCoeffs cc = stm_advance(s, L_method, mu_F, o.stm.radicand, [&](StmIterate& st, const StepCoeffs& co) {
      if (cfg) r = batch_size_rule(k, sigma_F, co.alpha, co.A_next, mu_F, o.eps, N, o.beta, o.batch_constant);
      node_primal_grads(p, net, st.x_tilde, grad, cfg, r, static_cast<std::uint64_t>(k));
      if (fused) {
        if (c > 0.0) {
          net.mix(st.x_tilde, wx);
          grad += 2.0 * c * wx;
        }
        gnorm = grad.norm();
        smooth_z_step(st.z, grad, st.x_tilde, co, st.A, mu_F, o.stm.z_rule);
      } else {
        gnorm = grad.norm();
        hist.add(co.alpha, grad, st.x_tilde);
        const CompositeZResult zr =
            composite_z_step(hist, apply_w, c, mu_F, g.lambda_min_plus(), g.lambda_max(), inner_tol, o.inner_budget);
        st.z = zr.z;
        res.inner_iterations += zr.iterations;
        res.inner_budget_exceeded = res.inner_budget_exceeded || zr.budget_exceeded;
      }
    });
    res.schedule.push(cc, r);
    const StackedVector xs(p.m(), p.n(), s.x);
    const double gap = local_gap(p, xs);
    if (std::isfinite(gap)) detail::guard_divergence(gap, initial, o.stm.divergence_factor);
    if (o.record_trace)
      res.trace.push_back(TraceRow{s.k, s.A, cc.alpha, r, gap, gnorm, net.rounds(), net.max_oracle_calls()});
    if (o.record_iterates) res.iterates.push_back(s.x);
    if (o.stm.observer) o.stm.observer(s);
    res.iterations = s.k;
    if (o.stop_on_target && p.known_opt && primal_certified(certificate(p, g, xs), o.eps, R_y)) break;
  }
  res.x = StackedVector(p.m(), p.n(), s.x);
  res.cert = certificate(p, g, res.x);
  res.success = primal_certified(res.cert, o.eps, R_y);
  return res;
}

// PDSTM / SPDSTM driver on y_hat = sqrt(W) y.
inline MethodResult dual_method(const std::string& name, const ProblemInstance& p, Network& net,
                                const MethodOptions& o, const StochasticOracleConfig* cfg) {
  check_shapes(p, net);
  if (!(p.mu > 0.0)) throw NotStronglyConvex(name + " needs mu > 0");
  const LaplacianGraph& g = net.graph();
  const DualConstants dc = dual_constants(p, g, cfg ? *cfg : StochasticOracleConfig{}, o.R_safety);
  const double m = p.m();
  // The dual of sum_k f_k = m F: accuracy m eps, radius m R_y.
  const double eps_G = m * o.eps;
  const double R_G = m * dc.R_y;
  const double L_psi = dc.L_psi > 0.0 ? dc.L_psi : 1.0 / p.mu;
  const int N = o.iterations > 0 ? o.iterations
                                 : stm_iteration_bound(L_psi, 0.0, R_G * R_G, eps_G, o.n_constant, o.max_iterations);
  const double sigma_psi = std::sqrt(dc.sigma_psi_sq);

  MethodResult res;
  res.method = name;
  res.R_y = dc.R_y;
  res.eps = o.eps;
  res.schedule.L = L_psi;
  const Eigen::Index len = static_cast<Eigen::Index>(p.m()) * p.n();
  StmIterate s = stm_start(Vector::Zero(len));
  Vector xr(len), wx(len), xsum = Vector::Zero(len);
  for (int k = 0; k < N; ++k) {
    long r = 1;
    double gnorm = 0.0;
    const StepCoeffs cc = stm_advance(s, L_psi, 0.0, o.stm.radicand, [&](StmIterate& st, const StepCoeffs& co) {
      if (cfg) r = batch_size_rule(k, sigma_psi, co.alpha, co.A_next, 0.0, eps_G, N, o.beta, o.batch_constant);
      node_conjugate(p, net, st.x_tilde, xr, cfg, r, static_cast<std::uint64_t>(k));
      net.mix(xr, wx);
      gnorm = std::sqrt(std::max(0.0, xr.dot(wx)));
      smooth_z_step(st.z, wx, st.x_tilde, co, st.A, 0.0, o.stm.z_rule);
      xsum += co.alpha * xr;
    });
    res.schedule.push(cc, r);
    const StackedVector xbar(p.m(), p.n(), xsum / s.A);
    if (o.record_trace)
      res.trace.push_back(TraceRow{s.k, s.A, cc.alpha, r, local_gap(p, xbar), gnorm, net.rounds(), net.max_oracle_calls()});
    if (o.record_iterates) res.iterates.push_back(s.x);
    if (o.stm.observer) o.stm.observer(s);
    res.iterations = s.k;
    if (o.stop_on_target) {
      const StackedVector yh(p.m(), p.n(), s.x);
      if (dual_certified(certificate(p, g, xbar, &yh), o.eps, dc.R_y)) break;
    }
  }
  res.x = s.A > 0.0 ? StackedVector(p.m(), p.n(), xsum / s.A) : StackedVector(p.m(), p.n());
  if (s.A == 0.0) {
    // N = 0: the primal output is the response at y = 0.
    node_conjugate(p, net, s.x, xr, nullptr, 1, 0);
    res.x = StackedVector(p.m(), p.n(), xr);
  }
  res.y_hat = StackedVector(p.m(), p.n(), s.x);
  res.cert = certificate(p, g, res.x, &*res.y_hat);
  res.success = dual_certified(res.cert, o.eps, dc.R_y);
  return res;
}

}  // namespace detail

/// Plain STM on F restricted to consensus, i.e. on (1/m) sum_k f_k.
inline MethodResult run_stm(const ProblemInstance& p, const MethodOptions& o = {}) {
  const double R2 = p.known_opt ? p.known_opt->x.squaredNorm()
                                : (o.R_x ? *o.R_x * *o.R_x : throw InvalidArgument("primal radius unknown"));
  const int N = o.iterations > 0 ? o.iterations : stm_iteration_bound(p.L, p.mu, R2, o.eps, o.n_constant, o.max_iterations);
  auto grad = [&](const Vector& x) {
    Vector g = Vector::Zero(p.n());
    for (int k = 0; k < p.m(); ++k) g += p.grad(k, x);
    return Vector(g / p.m());
  };
  std::function<double(const Vector&)> gap;
  if (p.known_opt)
    gap = [&](const Vector& x) { return detail::total_value(p, x) / p.m() - p.known_opt->f; };
  StmOptions so = o.stm;
  if (o.stop_on_target && p.known_opt) so.stop_gap = o.eps;
  std::vector<Vector> iterates;
  if (o.record_iterates) {
    auto prev = so.observer;
    so.observer = [&, prev](const StmIterate& st) {
      iterates.push_back(st.x);
      if (prev) prev(st);
    };
  }
  StmResult r = stm(grad, p.L, p.mu, Vector::Zero(p.n()), N, so, gap);
  MethodResult res;
  res.method = "stm";
  res.eps = o.eps;
  res.x = StackedVector::consensus(p.m(), r.x);
  res.iterations = r.iterations;
  res.schedule = r.schedule;
  if (o.record_trace) res.trace = std::move(r.trace);
  res.iterates = std::move(iterates);
  if (p.known_opt) res.cert.f_gap = gap(r.x);
  res.success = res.cert.f_gap && *res.cert.f_gap <= o.eps;
  return res;
}

/// BSTM on (1/m) sum_k f_k with noisy gradients averaged over nodes.
inline MethodResult run_bstm(const ProblemInstance& p, const StochasticOracleConfig& cfg, const MethodOptions& o = {},
                             int threads = 1) {
  BstmOptions bo;
  bo.R = std::sqrt(p.known_opt ? p.known_opt->x.squaredNorm()
                               : (o.R_x ? *o.R_x * *o.R_x : throw InvalidArgument("primal radius unknown")));
  bo.n_constant = o.n_constant;
  bo.batch_constant = o.batch_constant;
  bo.iterations = o.iterations;
  bo.max_iterations = o.max_iterations;
  bo.threads = threads;
  bo.stm = o.stm;
  if (o.stop_on_target && p.known_opt) bo.stm.stop_gap = o.eps;
  std::vector<Vector> iterates;
  if (o.record_iterates) {
    auto prev = bo.stm.observer;
    bo.stm.observer = [&, prev](const StmIterate& st) {
      iterates.push_back(st.x);
      if (prev) prev(st);
    };
  }
  auto oracle = [&](const Vector& x, Lineage lin) {
    Vector g = Vector::Zero(p.n());
    for (int k = 0; k < p.m(); ++k) g += stochastic_primal_grad(p, k, x, cfg, lin);
    return Vector(g / p.m());
  };
  std::function<double(const Vector&)> gap;
  if (p.known_opt)
    gap = [&](const Vector& x) { return detail::total_value(p, x) / p.m() - p.known_opt->f; };
  const double sigma_mean = cfg.sigma / std::sqrt(static_cast<double>(p.m()));
  StmResult r = bstm(oracle, p.L, p.mu, sigma_mean, Vector::Zero(p.n()), o.eps, o.beta, bo, gap);
  MethodResult res;
  res.method = "bstm";
  res.eps = o.eps;
  res.x = StackedVector::consensus(p.m(), r.x);
  res.iterations = r.iterations;
  res.schedule = r.schedule;
  if (o.record_trace) res.trace = std::move(r.trace);
  res.iterates = std::move(iterates);
  if (p.known_opt) res.cert.f_gap = gap(r.x);
  res.success = res.cert.f_gap && *res.cert.f_gap <= o.eps;
  return res;
}

inline MethodResult pstm(const ProblemInstance& p, Network& net, const MethodOptions& o = {}) {
  return detail::penalty_method("pstm", p, net, o, nullptr);
}

inline MethodResult pbstm(const ProblemInstance& p, Network& net, const StochasticOracleConfig& cfg,
                          const MethodOptions& o = {}) {
  return detail::penalty_method("pbstm", p, net, o, &cfg);
}

inline MethodResult pdstm(const ProblemInstance& p, Network& net, const MethodOptions& o = {}) {
  return detail::dual_method("pdstm", p, net, o, nullptr);
}

inline MethodResult spdstm(const ProblemInstance& p, Network& net, const StochasticOracleConfig& cfg,
                           const MethodOptions& o = {}) {
  return detail::dual_method("spdstm", p, net, o, &cfg);
}

/// STM with the dual strong convexity, stopped once ||grad psi(y)|| <= eps/R_y.
/// The returned gap bound <x(y_hat), y_hat>/m is reported as duality_gap.
inline MethodResult dual_sc_solve(const ProblemInstance& p, Network& net, const MethodOptions& o = {}) {
  detail::check_shapes(p, net);
  if (!(p.mu > 0.0)) throw NotStronglyConvex("dual_sc_solve needs mu > 0");
  const LaplacianGraph& g = net.graph();
  const DualConstants dc = dual_constants(p, g, {}, o.R_safety);
  const double m = p.m();
  const double R_G = m * dc.R_y;
  const double target = detail::feasibility_target(o.eps, dc.R_y);
  const double L_psi = dc.L_psi > 0.0 ? dc.L_psi : 1.0 / p.mu;
  const double mu_psi = dc.mu_psi;

  MethodResult res;
  res.method = "dual_sc";
  res.R_y = dc.R_y;
  res.eps = o.eps;
  res.schedule.L = L_psi;
  res.schedule.mu = mu_psi;
  const Eigen::Index len = static_cast<Eigen::Index>(p.m()) * p.n();
  StmIterate s = stm_start(Vector::Zero(len));
  Vector xr(len), wx(len), xo(len), wxo(len);

  auto check = [&](const Vector& y_hat) {
    detail::node_conjugate(p, net, y_hat, xo, nullptr, 1, 0);
    net.mix(xo, wxo);
    return std::sqrt(std::max(0.0, xo.dot(wxo)));
  };
  double gn = check(s.x);
  if (!(gn <= target)) {
    const double psi_acc = target * target / (2.0 * L_psi);
    int N = o.iterations;
    if (N <= 0) {
      const double ratio = std::max(L_psi * R_G * R_G / psi_acc, std::exp(1.0));
      const double bound = o.dual_budget_factor * o.n_constant * std::sqrt(L_psi / mu_psi) * std::log(ratio);
      N = bound < o.max_iterations ? std::max(1, static_cast<int>(std::ceil(bound))) : o.max_iterations;
    }
    for (int k = 0; k < N && !(gn <= target); ++k) {
      const StepCoeffs cc = stm_advance(s, L_psi, mu_psi, o.stm.radicand, [&](StmIterate& st, const StepCoeffs& co) {
        detail::node_conjugate(p, net, st.x_tilde, xr, nullptr, 1, 0);
        net.mix(xr, wx);
        smooth_z_step(st.z, wx, st.x_tilde, co, st.A, mu_psi, o.stm.z_rule);
      });
      res.schedule.push(cc, 1);
      gn = check(s.x);
      res.iterations = s.k;
      if (o.record_trace) {
        const StackedVector xs(p.m(), p.n(), xo);
        res.trace.push_back(
            TraceRow{s.k, s.A, cc.alpha, 1, detail::local_gap(p, xs), gn, net.rounds(), net.max_oracle_calls()});
      }
      if (o.record_iterates) res.iterates.push_back(s.x);
      if (o.stm.observer) o.stm.observer(s);
    }
    if (!(gn <= target))
      throw NotConverged("dual gradient norm " + std::to_string(gn) + " above " + std::to_string(target) +
                         " after " + std::to_string(N) + " iterations");
  }
  res.x = StackedVector(p.m(), p.n(), xo);
  res.y_hat = StackedVector(p.m(), p.n(), s.x);
  res.grad_norm = gn;
  res.cert = certificate(p, g, res.x, &*res.y_hat);
  res.success = detail::dual_certified(res.cert, o.eps, dc.R_y);
  return res;
}

}  // namespace decopt
