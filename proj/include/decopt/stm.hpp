#pragma once

// Similar Triangles Method: coefficient schedule, iteration, batched
// stochastic variant and the Chebyshev solver used for quadratic composite
// steps.

#include "decopt/common.hpp"
#include "decopt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace decopt {

/// Radicand of the line-2 square root. `printed` uses (1 + A mu)/(4L^2),
/// `squared` uses (1 + A mu)^2/(4L^2), the positive root of
/// L a^2 = (1 + A mu)(A + a).
enum class Radicand { printed, squared };

/// z update. `dual_averaging` is the exact minimizer of the accumulated model
/// (1 + A' mu) z' = (1 + A mu) z + a (mu x~ - g). `accumulated` is the step
/// z - a/(1 + A' mu) (g - mu x~); `literal` divides by (1 + mu) instead.
enum class ZStepRule { dual_averaging, accumulated, literal };

struct StepCoeffs {
  double alpha = 0.0;
  double A_next = 0.0;
};

inline StepCoeffs stm_step_coeffs(double A, double L, double mu, Radicand radicand = Radicand::printed) {
  if (!(L > 0.0)) throw NonpositiveL("L must be positive, got " + std::to_string(L));
  if (!(A >= 0.0) || !(mu >= 0.0)) throw InvalidArgument("need A >= 0 and mu >= 0");
  const double q = 1.0 + A * mu;
  const double head = radicand == Radicand::printed ? q : q * q;
  StepCoeffs c;
  c.alpha = q / (2.0 * L) + std::sqrt(head / (4.0 * L * L) + A * q / L);
  c.A_next = A + c.alpha;
  return c;
}

/// Relative residual of the quadratic whose root the step takes.
inline double schedule_residual(double A, double alpha, double L, double mu, Radicand radicand) {
  const double q = 1.0 + A * mu;
  const double head = radicand == Radicand::printed ? q : q * q;
  const double lhs = (alpha - q / (2.0 * L)) * (alpha - q / (2.0 * L));
  const double rhs = head / (4.0 * L * L) + A * q / L;
  return std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300});
}

/// Relative residual of L a^2 - (1 + A mu) a - A (1 + A mu) = 0.
inline double squared_identity_residual(double A, double alpha, double L, double mu) {
  const double q = 1.0 + A * mu;
  const double terms[] = {L * alpha * alpha, q * alpha, A * q};
  const double scale = std::max({terms[0], terms[1], terms[2], 1e-300});
  return std::abs(terms[0] - terms[1] - terms[2]) / scale;
}

struct StmSchedule {
  double L = 1.0;
  double mu = 0.0;
  std::vector<double> alphas{0.0};
  std::vector<double> As{0.0};
  std::vector<long> batch_sizes{0};

  int steps() const { return static_cast<int>(alphas.size()) - 1; }
  void push(const StepCoeffs& c, long r) {
    alphas.push_back(c.alpha);
    As.push_back(c.A_next);
    batch_sizes.push_back(r);
  }
};

inline StmSchedule make_schedule(double L, double mu, int N, Radicand radicand = Radicand::printed) {
  StmSchedule s;
  s.L = L;
  s.mu = mu;
  for (int k = 0; k < N; ++k) s.push(stm_step_coeffs(s.As.back(), L, mu, radicand), 1);
  return s;
}

struct StmIterate {
  Vector x;
  Vector z;
  Vector x_tilde;
  double A = 0.0;
  int k = 0;
};

inline StmIterate stm_start(const Vector& x0) { return StmIterate{x0, x0, x0, 0.0, 0}; }

inline void smooth_z_step(Vector& z, const Vector& g, const Vector& x_tilde, const StepCoeffs& c, double A,
                          double mu, ZStepRule rule) {
  switch (rule) {
    case ZStepRule::dual_averaging:
      z = ((1.0 + A * mu) * z + c.alpha * (mu * x_tilde - g)) / (1.0 + c.A_next * mu);
      break;
    case ZStepRule::accumulated:
      z -= c.alpha / (1.0 + c.A_next * mu) * (g - mu * x_tilde);
      break;
    case ZStepRule::literal:
      z -= c.alpha / (1.0 + mu) * (g - mu * x_tilde);
      break;
  }
}

/// One iteration: x~ from (x, z), then z_update(state, coeffs) sets z, then x.
template <class ZUpdate>
StepCoeffs stm_advance(StmIterate& s, double L, double mu, Radicand radicand, ZUpdate&& z_update) {
  const StepCoeffs c = stm_step_coeffs(s.A, L, mu, radicand);
  if (!std::isfinite(c.A_next)) throw DivergenceDetected("coefficient A overflowed at iteration " + std::to_string(s.k));
  s.x_tilde = (s.A * s.x + c.alpha * s.z) / c.A_next;
  z_update(s, c);
  s.x = (s.A * s.x + c.alpha * s.z) / c.A_next;
  s.A = c.A_next;
  ++s.k;
  return c;
}

struct TraceRow {
  int k = 0;
  double A = 0.0;
  double alpha = 0.0;
  long r = 0;
  double f_gap = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  long rounds = 0;
  long oracle_calls = 0;
};

struct StmOptions {
  Radicand radicand = Radicand::printed;
  ZStepRule z_rule = ZStepRule::dual_averaging;
  double divergence_factor = 1e6;
  std::optional<double> stop_gap;  // stop once the objective gap is at most this
  std::function<void(const StmIterate&)> observer;
};

struct StmResult {
  Vector x;
  StmSchedule schedule;
  std::vector<TraceRow> trace;
  long oracle_calls = 0;
  int iterations = 0;
};

namespace detail {

inline void guard_divergence(double gap, double initial, double factor) {
  if (std::isfinite(initial) && initial > 0.0 && gap > factor * initial)
    throw DivergenceDetected("objective gap " + std::to_string(gap) + " exceeds " + std::to_string(factor) +
                             " x initial gap " + std::to_string(initial));
  if (std::isnan(gap) && std::isfinite(initial)) throw DivergenceDetected("objective gap is NaN");
}

}  // namespace detail

/// Deterministic STM. grad(x) returns the gradient; f_gap (optional) is used
/// for the trace and the divergence guard.
template <class Grad>
StmResult stm(Grad&& grad, double L, double mu, const Vector& x0, int N, const StmOptions& opts = {},
              const std::function<double(const Vector&)>& f_gap = {}) {
  if (N < 0) throw InvalidArgument("iteration count must be nonnegative");
  StmResult out;
  out.schedule.L = L;
  out.schedule.mu = mu;
  StmIterate s = stm_start(x0);
  const double initial = f_gap ? f_gap(x0) : std::numeric_limits<double>::quiet_NaN();
  for (int k = 0; k < N; ++k) {
    double gnorm = 0.0;
    const StepCoeffs c = stm_advance(s, L, mu, opts.radicand, [&](StmIterate& st, const StepCoeffs& cc) {
      const Vector g = grad(st.x_tilde);
      gnorm = g.norm();
      smooth_z_step(st.z, g, st.x_tilde, cc, st.A, mu, opts.z_rule);
    });
    ++out.oracle_calls;
    out.schedule.push(c, 1);
    TraceRow row{s.k, s.A, c.alpha, 1, std::numeric_limits<double>::quiet_NaN(), gnorm, 0, out.oracle_calls};
    if (f_gap) {
      row.f_gap = f_gap(s.x);
      detail::guard_divergence(row.f_gap, initial, opts.divergence_factor);
    }
    out.trace.push_back(row);
    if (opts.observer) opts.observer(s);
    if (opts.stop_gap && row.f_gap <= *opts.stop_gap) break;
  }
  out.x = s.x;
  out.iterations = s.k;
  return out;
}

// Batched stochastic gradients ------------------------------------------------

/// r = max(1, ceil(c_b sigma^2 alpha ln(N/beta) / ((1 + A mu) eps))).
inline long batch_size_rule(int k, double sigma, double alpha_next, double A_next, double mu, double eps, int N,
                            double beta, double c_b) {
  (void)k;
  if (!(eps > 0.0)) throw InvalidTolerance("eps must be positive");
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidTolerance("beta must lie in (0, 1)");
  if (N < 1) throw InvalidTolerance("N must be at least 1");
  if (!(c_b > 0.0)) throw InvalidTolerance("batch constant must be positive");
  const double raw = c_b * sigma * sigma * alpha_next * std::log(static_cast<double>(N) / beta) /
                     ((1.0 + A_next * mu) * eps);
  // Relative slack keeps exact integers from rounding up.
  const double r = std::ceil(raw * (1.0 - 1e-12));
  if (!(r < 1e15)) throw InvalidTolerance("batch size overflow");
  return std::max<long>(1, static_cast<long>(r));
}

/// Mean of r stochastic gradients, member i drawn with lineage (iter, i).
/// Members may be evaluated in parallel; the sum runs in index order.
template <class StochGrad>
Vector batched_grad(StochGrad&& oracle, const Vector& x, long r, std::uint64_t iter, int threads = 1) {
  if (r < 1) throw InvalidArgument("batch size must be at least 1");
  std::vector<Vector> members(static_cast<std::size_t>(r));
  parallel_for(members.size(), threads,
               [&](std::size_t i) { members[i] = oracle(x, Lineage{iter, static_cast<std::uint64_t>(i)}); });
  Vector acc = members[0];
  for (std::size_t i = 1; i < members.size(); ++i) acc += members[i];
  return acc / static_cast<double>(r);
}

/// c_N * min(sqrt(L R^2/eps), sqrt(L/mu) ln(L R^2/eps)), at least 1, at most cap.
inline int stm_iteration_bound(double L, double mu, double R2, double eps, double c_N, int cap) {
  if (!(eps > 0.0)) throw InvalidTolerance("eps must be positive");
  const double ratio = std::max(L * R2 / eps, 0.0);
  double n = std::sqrt(ratio);
  if (mu > 0.0) n = std::min(n, std::sqrt(L / mu) * std::log(std::max(ratio, std::exp(1.0))));
  n = std::ceil(c_N * n);
  if (!(n < static_cast<double>(cap))) return cap;
  return std::max(1, static_cast<int>(n));
}

struct BstmOptions {
  double R = 1.0;               // bound on ||x0 - x*||
  double n_constant = 1.0;
  double batch_constant = 1.0;
  int iterations = 0;           // 0: use the bound
  int max_iterations = 100000;
  int threads = 1;
  StmOptions stm;
};

/// BSTM: STM on batched stochastic gradients. oracle(x, lineage) -> vector.
template <class StochGrad>
StmResult bstm(StochGrad&& oracle, double L, double mu, double sigma, const Vector& x0, double eps, double beta,
               const BstmOptions& opts = {}, const std::function<double(const Vector&)>& f_gap = {}) {
  const int N = opts.iterations > 0 ? opts.iterations
                                    : stm_iteration_bound(L, mu, opts.R * opts.R, eps, opts.n_constant,
                                                          opts.max_iterations);
  StmResult out;
  out.schedule.L = L;
  out.schedule.mu = mu;
  StmIterate s = stm_start(x0);
  const double initial = f_gap ? f_gap(x0) : std::numeric_limits<double>::quiet_NaN();
  for (int k = 0; k < N; ++k) {
    long r = 1;
    double gnorm = 0.0;
    const StepCoeffs c = stm_advance(s, L, mu, opts.stm.radicand, [&](StmIterate& st, const StepCoeffs& cc) {
      r = batch_size_rule(k, sigma, cc.alpha, cc.A_next, mu, eps, N, beta, opts.batch_constant);
      const Vector g = batched_grad(oracle, st.x_tilde, r, static_cast<std::uint64_t>(k), opts.threads);
      gnorm = g.norm();
      smooth_z_step(st.z, g, st.x_tilde, cc, st.A, mu, opts.stm.z_rule);
    });
    out.oracle_calls += r;
    out.schedule.push(c, r);
    TraceRow row{s.k, s.A, c.alpha, r, std::numeric_limits<double>::quiet_NaN(), gnorm, 0, out.oracle_calls};
    if (f_gap) {
      row.f_gap = f_gap(s.x);
      detail::guard_divergence(row.f_gap, initial, opts.stm.divergence_factor);
    }
    out.trace.push_back(row);
    if (opts.stm.observer) opts.stm.observer(s);
    if (opts.stm.stop_gap && row.f_gap <= *opts.stm.stop_gap) break;
  }
  out.x = s.x;
  out.iterations = s.k;
  return out;
}

// Chebyshev iteration -----------------------------------------------------------

struct ChebyshevResult {
  Vector x;
  long applications = 0;  // operator applications, including the initial residual
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// Chebyshev semi-iteration for an SPD operator whose spectrum on the error
/// subspace lies in [lo, hi]. op(in, out) applies the operator. Stops when
/// ||rhs - op(x)|| <= tol or after `budget` iterations. A caller that knows
/// the initial residual exactly may pass it as r0 (its cost is then the
/// caller's to count).
template <class Op>
ChebyshevResult chebyshev_solve(Op&& op, const Vector& rhs, const Vector& x0, double lo, double hi, double tol,
                                int budget, const Vector* r0 = nullptr) {
  if (!(tol > 0.0)) throw InvalidTolerance("Chebyshev tolerance must be positive");
  if (!(lo > 0.0) || !(hi >= lo)) throw InvalidArgument("Chebyshev bounds need 0 < lo <= hi");
  ChebyshevResult out;
  out.x = x0;
  Vector r(rhs.size());
  Vector ad(rhs.size());
  if (r0) {
    r = *r0;
  } else {
    op(out.x, ad);
    ++out.applications;
    r = rhs - ad;
  }
  out.residual = r.norm();
  const double theta = 0.5 * (hi + lo);
  const double delta = 0.5 * (hi - lo);
  const bool flat = delta <= 1e-15 * hi;
  const double sigma1 = flat ? 0.0 : theta / delta;
  double rho = flat ? 0.0 : 1.0 / sigma1;
  Vector d = r / theta;
  while (out.residual > tol && out.iterations < budget) {
    out.x += d;
    op(d, ad);
    ++out.applications;
    r -= ad;
    ++out.iterations;
    out.residual = r.norm();
    if (flat) {
      d = r / theta;
    } else {
      const double rho_next = 1.0 / (2.0 * sigma1 - rho);
      d = (rho_next * rho) * d + (2.0 * rho_next / delta) * r;
      rho = rho_next;
    }
  }
  out.converged = out.residual <= tol;
  return out;
}

/// Iteration count after which the Chebyshev residual bound 2 q^k (q the
/// contraction factor) is below tol_rel.
inline int chebyshev_iteration_bound(double lo, double hi, double tol_rel) {
  const double kappa = hi / lo;
  return static_cast<int>(std::ceil(std::sqrt(kappa) * std::log(2.0 / tol_rel)));
}

/// Solves (I + s W) x = rhs where apply_w(in, out) computes W in (one round per
/// call) and W has nonzero spectrum in [lambda_min_plus, lambda_max]. The
/// initial guess is rhs, so components in the kernel of W are exact. Throws
/// BudgetExceeded unless allow_partial is set.
template <class ApplyW>
ChebyshevResult chebyshev_quadratic_solve(ApplyW&& apply_w, double s, const Vector& rhs, double lambda_min_plus,
                                          double lambda_max, double tol, int budget, bool allow_partial = false) {
  if (s < 0.0) throw InvalidArgument("penalty scale must be nonnegative");
  if (s == 0.0 || lambda_max == 0.0) {
    ChebyshevResult out;
    out.x = rhs;
    out.converged = true;
    return out;
  }
  Vector tmp(rhs.size());
  auto op = [&](const Vector& in, Vector& out) {
    apply_w(in, tmp);
    out = in + s * tmp;
  };
  // rhs - (I + sW) rhs formed directly, so rounding leaves no kernel component.
  apply_w(rhs, tmp);
  const Vector r0 = -s * tmp;
  ChebyshevResult res =
      chebyshev_solve(op, rhs, rhs, 1.0 + s * lambda_min_plus, 1.0 + s * lambda_max, tol, budget, &r0);
  ++res.applications;
  if (!res.converged && !allow_partial)
    throw BudgetExceeded("Chebyshev residual " + std::to_string(res.residual) + " above " + std::to_string(tol) +
                         " after " + std::to_string(res.iterations) + " iterations");
  return res;
}

// Composite z step ------------------------------------------------------------------

/// Running sums of the linear model: sum a_l g_l, sum a_l x~_l, A = sum a_l.
struct CompositeHistory {
  Vector anchor;
  Vector sum_alpha_grad;
  Vector sum_alpha_xt;
  double A = 0.0;

  explicit CompositeHistory(const Vector& z0)
      : anchor(z0), sum_alpha_grad(Vector::Zero(z0.size())), sum_alpha_xt(Vector::Zero(z0.size())) {}
  void add(double alpha, const Vector& g, const Vector& x_tilde) {
    sum_alpha_grad += alpha * g;
    sum_alpha_xt += alpha * x_tilde;
    A += alpha;
  }
};

struct CompositeZResult {
  Vector z;
  long applications = 0;
  int iterations = 0;
  double residual = 0.0;
  bool budget_exceeded = false;
};

/// argmin_z sum_l a_l {<g_l, z - x~_l> + c z'Wz + mu/2 ||z - x~_l||^2} + 1/2 ||z - anchor||^2,
/// solved to objective accuracy tol_fun.
template <class ApplyW>
CompositeZResult composite_z_step(const CompositeHistory& h, ApplyW&& apply_w, double c, double mu,
                                  double lambda_min_plus, double lambda_max, double tol_fun, int budget) {
  const double denom = 1.0 + h.A * mu;
  const Vector rhs = (h.anchor + mu * h.sum_alpha_xt - h.sum_alpha_grad) / denom;
  CompositeZResult out;
  if (c == 0.0 || lambda_max == 0.0) {
    out.z = rhs;
    return out;
  }
  const double s = 2.0 * c * h.A / denom;
  const double tol = std::sqrt(2.0 * tol_fun / denom);
  const ChebyshevResult res =
      chebyshev_quadratic_solve(apply_w, s, rhs, lambda_min_plus, lambda_max, tol, budget, true);
  out.z = res.x;
  out.applications = res.applications;
  out.iterations = res.iterations;
  out.residual = res.residual;
  out.budget_exceeded = !res.converged;
  return out;
}

}  // namespace decopt
