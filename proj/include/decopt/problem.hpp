#pragma once

// Finite-sum problem instances F(x) = (1/m) sum_k f_k(x) and their oracles.

#include "decopt/common.hpp"
#include "decopt/graph.hpp"
#include "decopt/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace decopt {

/// f(x) = 1/2 (x-b)' H (x-b).
struct QuadraticComponent {
  Matrix H;
  Vector b;
  Eigen::LDLT<Matrix> factor;

  QuadraticComponent(Matrix h, Vector offset) : H(std::move(h)), b(std::move(offset)), factor(H) {}

  double value(const Vector& x) const {
    const Vector d = x - b;
    return 0.5 * d.dot(H * d);
  }
  Vector grad(const Vector& x) const { return H * (x - b); }
  Vector conj_argmax(const Vector& lam) const { return Vector(factor.solve(lam)) + b; }
};

/// f(x) = (1/s) sum_i log(1 + exp(-y_i a_i'x)) + mu/2 ||x||^2.
struct LogisticComponent {
  Matrix A;  // s x n, rows a_i
  Vector y;  // labels in {-1, +1}
  double mu = 0.0;

  static double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
  static double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
  }

  double value(const Vector& x) const {
    const Vector margin = y.cwiseProduct(A * x);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < margin.size(); ++i) acc += softplus(-margin[i]);
    return acc / static_cast<double>(A.rows()) + 0.5 * mu * x.squaredNorm();
  }
  Vector grad(const Vector& x) const {
    const Vector margin = y.cwiseProduct(A * x);
    Vector w(margin.size());
    for (Eigen::Index i = 0; i < margin.size(); ++i) w[i] = -y[i] * sigmoid(-margin[i]);
    return A.transpose() * w / static_cast<double>(A.rows()) + mu * x;
  }
  Matrix hessian(const Vector& x) const {
    const Vector margin = y.cwiseProduct(A * x);
    Vector d(margin.size());
    for (Eigen::Index i = 0; i < margin.size(); ++i) {
      const double s = sigmoid(margin[i]);
      d[i] = s * (1.0 - s);
    }
    Matrix h = A.transpose() * d.asDiagonal() * A / static_cast<double>(A.rows());
    h.diagonal().array() += mu;
    return h;
  }
  /// Damped Newton on f(x) - <lam, x>.
  Vector conj_argmax(const Vector& lam) const {
    Vector x = Vector::Zero(lam.size());
    const double tol = std::max(1e-10, 1e-14 * lam.norm());
    auto merit = [&](const Vector& v) { return value(v) - lam.dot(v); };
    for (int it = 0; it < 200; ++it) {
      const Vector g = grad(x) - lam;
      if (g.norm() <= tol) return x;
      const Vector step = hessian(x).ldlt().solve(g);
      double t = 1.0;
      const double base = merit(x);
      const double slope = g.dot(step);
      const double noise = 8.0 * std::numeric_limits<double>::epsilon() * (std::abs(base) + 1.0);
      while (t > 1e-12 && merit(x - t * step) > base - 0.25 * t * slope + noise) t *= 0.5;
      x -= t * step;
    }
    if ((grad(x) - lam).norm() <= tol) return x;
    throw NotConverged("logistic conjugate solve did not reach the gradient tolerance");
  }
};

using Component = std::variant<QuadraticComponent, LogisticComponent>;

struct ProblemSpec {
  std::string family = "quadratic";  // quadratic | logistic | explicit
  int m = 1;
  int n = 1;
  double mu = 0.0;
  double L = 1.0;
  std::uint64_t seed = 0;
  double offset_scale = 1.0;   // spread of the per-node offsets
  double offset_center = 0.0;  // common shift of every offset coordinate
  int samples = 20;            // logistic: rows per node
  bool rotate = true;          // quadratic: random eigenbasis; false keeps H diagonal
};

struct KnownOptimum {
  Vector x;
  double f = 0.0;  // F(x*) with 1/m averaging
};

class ProblemInstance {
 public:
  ProblemSpec spec;
  std::vector<Component> components;
  double L = 1.0;
  double mu = 0.0;
  std::optional<KnownOptimum> known_opt;
  bool singular = false;  // sum of curvatures is singular; known_opt omitted

  int m() const { return static_cast<int>(components.size()); }
  int n() const { return spec.n; }

  double value(int k, const Vector& x) const {
    return std::visit([&](const auto& c) { return c.value(x); }, component(k));
  }
  Vector grad(int k, const Vector& x) const {
    return std::visit([&](const auto& c) { return Vector(c.grad(x)); }, component(k));
  }

  const Component& component(int k) const {
    if (k < 0 || k >= m()) throw InvalidArgument("node index " + std::to_string(k) + " out of range");
    return components[static_cast<std::size_t>(k)];
  }
};

struct StochasticOracleConfig {
  double sigma = 0.0;
  double sigma_phi = 0.0;
  double delta_bias = 0.0;
  std::uint64_t master_seed = 0;
};

namespace detail {

inline void check_dim(const ProblemInstance& p, const Vector& x) {
  if (x.size() != p.n())
    throw DimensionMismatch("vector of length " + std::to_string(x.size()) + ", expected " +
                            std::to_string(p.n()));
}

inline Matrix random_orthogonal(int n, std::mt19937_64& gen) {
  std::normal_distribution<double> normal;
  Matrix g(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) g(i, j) = normal(gen);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  // Sign fix so the factor is unique.
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

inline double total_value(const ProblemInstance& p, const Vector& x) {
  double acc = 0.0;
  for (int k = 0; k < p.m(); ++k) acc += p.value(k, x);
  return acc;
}

inline void attach_quadratic_optimum(ProblemInstance& p) {
  Matrix hsum = Matrix::Zero(p.n(), p.n());
  Vector rhs = Vector::Zero(p.n());
  for (const auto& c : p.components) {
    const auto& q = std::get<QuadraticComponent>(c);
    hsum += q.H;
    rhs += q.H * q.b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(hsum, Eigen::EigenvaluesOnly);
  const double top = eig.eigenvalues().maxCoeff();
  if (eig.eigenvalues().minCoeff() <= 1e-12 * std::max(top, 1.0)) {
    p.singular = true;
    p.known_opt.reset();
    return;
  }
  KnownOptimum opt;
  opt.x = hsum.ldlt().solve(rhs);
  opt.f = total_value(p, opt.x) / p.m();
  p.known_opt = std::move(opt);
}

// Newton on the sum of smooth components.
inline void attach_newton_optimum(ProblemInstance& p) {
  Vector x = Vector::Zero(p.n());
  auto total_grad = [&](const Vector& v) {
    Vector g = Vector::Zero(p.n());
    for (int k = 0; k < p.m(); ++k) g += p.grad(k, v);
    return g;
  };
  for (int it = 0; it < 200; ++it) {
    const Vector g = total_grad(x);
    if (g.norm() <= 1e-13 * p.m()) {
      p.known_opt = KnownOptimum{x, total_value(p, x) / p.m()};
      return;
    }
    Matrix h = Matrix::Zero(p.n(), p.n());
    for (const auto& c : p.components) h += std::get<LogisticComponent>(c).hessian(x);
    Eigen::LDLT<Matrix> ldlt(h);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-14) break;
    const Vector step = ldlt.solve(g);
    double t = 1.0;
    const double base = total_value(p, x);
    while (t > 1e-12 && total_value(p, x - t * step) > base - 0.25 * t * g.dot(step)) t *= 0.5;
    x -= t * step;
  }
  p.singular = true;
  p.known_opt.reset();
}

}  // namespace detail

/// Quadratic instance with H_k = Q_k diag(lambda) Q_k', lambda geometrically
/// spaced in [mu, L] (the lower end is L*1e-8 when mu = 0), and offsets
/// b_k = offset_center * 1 + offset_scale * N(0, I).
inline ProblemInstance make_quadratic_instance(const ProblemSpec& in) {
  if (in.m < 1 || in.n < 1) throw InvalidArgument("m and n must be positive");
  if (!(in.mu >= 0.0) || !(in.L >= in.mu)) throw InvalidArgument("need 0 <= mu <= L");
  if (!(in.L > 0.0)) throw NonpositiveL("L must be positive");
  ProblemInstance p;
  p.spec = in;
  p.spec.family = "quadratic";
  p.L = in.L;
  p.mu = in.mu;
  std::mt19937_64 gen(splitmix64(in.seed ^ 0x71a5ULL));
  std::normal_distribution<double> normal;
  const int n = in.n;
  Vector lambda(n);
  if (n == 1) {
    lambda[0] = in.L;
  } else {
    const double lo = in.mu > 0.0 ? in.mu : in.L * 1e-8;
    for (int i = 0; i < n; ++i)
      lambda[i] = lo * std::pow(in.L / lo, static_cast<double>(i) / static_cast<double>(n - 1));
  }
  for (int k = 0; k < in.m; ++k) {
    Matrix h;
    if (in.mu == in.L) {
      h = in.L * Matrix::Identity(n, n);
    } else if (!in.rotate) {
      h = lambda.asDiagonal();
    } else {
      const Matrix q = detail::random_orthogonal(n, gen);
      h = q * lambda.asDiagonal() * q.transpose();
      h = 0.5 * (h + h.transpose());
    }
    Vector b(n);
    for (int i = 0; i < n; ++i) b[i] = in.offset_center + in.offset_scale * normal(gen);
    p.components.emplace_back(QuadraticComponent(std::move(h), std::move(b)));
  }
  detail::attach_quadratic_optimum(p);
  return p;
}

inline ProblemInstance make_quadratic_instance(std::uint64_t seed, int m, int n, double mu, double L) {
  ProblemSpec s;
  s.seed = seed;
  s.m = m;
  s.n = n;
  s.mu = mu;
  s.L = L;
  return make_quadratic_instance(s);
}

/// Hand-specified quadratic instance; mu and L are read off the curvatures.
inline ProblemInstance make_explicit_quadratic(const std::vector<Matrix>& H, const std::vector<Vector>& b) {
  if (H.empty() || H.size() != b.size()) throw InvalidArgument("need one offset per curvature matrix");
  ProblemInstance p;
  p.spec.family = "explicit";
  p.spec.m = static_cast<int>(H.size());
  p.spec.n = static_cast<int>(b.front().size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (std::size_t k = 0; k < H.size(); ++k) {
    if (H[k].rows() != p.spec.n || H[k].cols() != p.spec.n || b[k].size() != p.spec.n)
      throw DimensionMismatch("component " + std::to_string(k) + " has the wrong size");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(H[k], Eigen::EigenvaluesOnly);
    lo = std::min(lo, eig.eigenvalues().minCoeff());
    hi = std::max(hi, eig.eigenvalues().maxCoeff());
    p.components.emplace_back(QuadraticComponent(H[k], b[k]));
  }
  if (lo < -1e-12) throw InvalidArgument("curvature matrices must be positive semidefinite");
  p.mu = std::max(lo, 0.0);
  p.L = hi;
  p.spec.mu = p.mu;
  p.spec.L = p.L;
  detail::attach_quadratic_optimum(p);
  return p;
}

/// Regularized logistic regression per node, data scaled so each f_k is
/// L-smooth and mu-strongly convex.
inline ProblemInstance make_logistic_instance(const ProblemSpec& in) {
  if (in.m < 1 || in.n < 1 || in.samples < 1) throw InvalidArgument("m, n and samples must be positive");
  if (!(in.mu >= 0.0) || !(in.L >= in.mu)) throw InvalidArgument("need 0 <= mu <= L");
  if (!(in.L > 0.0)) throw NonpositiveL("L must be positive");
  ProblemInstance p;
  p.spec = in;
  p.spec.family = "logistic";
  p.L = in.L;
  p.mu = in.mu;
  std::mt19937_64 gen(splitmix64(in.seed ^ 0x10915ULL));
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.5);
  for (int k = 0; k < in.m; ++k) {
    LogisticComponent c;
    c.mu = in.mu;
    c.A.resize(in.samples, in.n);
    c.y.resize(in.samples);
    Vector shift(in.n);
    for (int j = 0; j < in.n; ++j) shift[j] = in.offset_center + in.offset_scale * normal(gen);
    for (int i = 0; i < in.samples; ++i) {
      c.y[i] = coin(gen) ? 1.0 : -1.0;
      for (int j = 0; j < in.n; ++j) c.A(i, j) = normal(gen) + c.y[i] * shift[j];
    }
    const Matrix gram = c.A.transpose() * c.A / static_cast<double>(in.samples);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    const double curv = 0.25 * eig.eigenvalues().maxCoeff();
    c.A *= (curv > 0.0 ? std::sqrt((in.L - in.mu) / curv) : 0.0);
    p.components.emplace_back(std::move(c));
  }
  detail::attach_newton_optimum(p);
  return p;
}

inline ProblemInstance make_instance(const ProblemSpec& s) {
  if (s.family == "quadratic") return make_quadratic_instance(s);
  if (s.family == "logistic") return make_logistic_instance(s);
  throw InvalidArgument("unknown problem family '" + s.family + "'");
}

// Oracles -------------------------------------------------------------------

inline Vector primal_grad(const ProblemInstance& p, int k, const Vector& x) {
  detail::check_dim(p, x);
  return p.grad(k, x);
}

/// grad f_k(x) + zeta + delta_bias * 1/sqrt(n); zeta is keyed by (seed, k, lineage).
inline Vector stochastic_primal_grad(const ProblemInstance& p, int k, const Vector& x,
                                     const StochasticOracleConfig& cfg, Lineage lineage) {
  Vector g = primal_grad(p, k, x);
  if (cfg.sigma > 0.0)
    g += gaussian_noise(stream_key(cfg.master_seed, StreamDomain::primal, static_cast<std::uint64_t>(k), lineage),
                        p.n(), cfg.sigma);
  if (cfg.delta_bias != 0.0) g.array() += cfg.delta_bias / std::sqrt(static_cast<double>(p.n()));
  return g;
}

/// argmax_x { <lam, x> - f_k(x) }, the gradient of the conjugate at lam.
inline Vector conjugate_argmax(const ProblemInstance& p, int k, const Vector& lam) {
  detail::check_dim(p, lam);
  if (!(p.mu > 0.0)) throw NotStronglyConvex("conjugate maximizer needs mu > 0");
  return std::visit([&](const auto& c) { return Vector(c.conj_argmax(lam)); }, p.component(k));
}

inline double conjugate_value(const ProblemInstance& p, int k, const Vector& lam) {
  const Vector x = conjugate_argmax(p, k, lam);
  return lam.dot(x) - p.value(k, x);
}

inline Vector stochastic_conjugate_argmax(const ProblemInstance& p, int k, const Vector& lam,
                                          const StochasticOracleConfig& cfg, Lineage lineage) {
  Vector x = conjugate_argmax(p, k, lam);
  if (cfg.sigma_phi > 0.0)
    x += gaussian_noise(stream_key(cfg.master_seed, StreamDomain::dual, static_cast<std::uint64_t>(k), lineage),
                        p.n(), cfg.sigma_phi);
  return x;
}

// Stacked quantities ----------------------------------------------------------

/// F(x) = (1/m) sum_k f_k(x_k).
inline double objective(const ProblemInstance& p, const StackedVector& x) {
  double acc = 0.0;
  for (int k = 0; k < p.m(); ++k) acc += p.value(k, Vector(x.block(k)));
  return acc / p.m();
}

/// Blocks grad f_k(x_k) / m.
inline StackedVector objective_grad(const ProblemInstance& p, const StackedVector& x) {
  StackedVector g(p.m(), p.n());
  for (int k = 0; k < p.m(); ++k) g.block(k) = p.grad(k, Vector(x.block(k))) / p.m();
  return g;
}

/// Dual solution radius: ||grad F(x*)|| / sqrt(lambda_min_plus), or the
/// safety-scaled value at x = 0 when x* is unknown. Zero for a single node.
inline double dual_radius(const ProblemInstance& p, const LaplacianGraph& g, double safety = 2.0) {
  if (g.m() != p.m()) throw DimensionMismatch("graph and problem disagree on m");
  if (g.m() == 1) return 0.0;
  const double root = std::sqrt(g.lambda_min_plus());
  if (p.known_opt) {
    const StackedVector xs = StackedVector::consensus(p.m(), p.known_opt->x);
    return objective_grad(p, xs).data().norm() / root;
  }
  return safety * objective_grad(p, StackedVector(p.m(), p.n())).data().norm() / root;
}

struct DualConstants {
  double L_psi = 0.0;
  double mu_psi = 0.0;
  double sigma_psi_sq = 0.0;
  double R_y = 0.0;
};

inline DualConstants dual_constants(const ProblemInstance& p, const LaplacianGraph& g,
                                    const StochasticOracleConfig& cfg = {}, double safety = 2.0) {
  if (!(p.mu > 0.0)) throw MissingCurvature("dual smoothness needs mu > 0");
  if (!std::isfinite(p.L)) throw MissingCurvature("dual strong convexity needs finite L");
  DualConstants d;
  d.L_psi = g.lambda_max() / p.mu;
  d.mu_psi = g.lambda_min_plus() / p.L;
  d.sigma_psi_sq = g.lambda_max() * g.m() * cfg.sigma_phi * cfg.sigma_phi;
  d.R_y = dual_radius(p, g, safety);
  return d;
}

// Instance files: "key value" lines sufficient to regenerate the instance.

inline void write_instance(std::ostream& os, const ProblemSpec& s) {
  if (s.family == "explicit") throw InvalidArgument("explicit instances cannot be regenerated from a header");
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "family " << s.family << '\n'
     << "m " << s.m << '\n'
     << "n " << s.n << '\n'
     << "mu " << num(s.mu) << '\n'
     << "L " << num(s.L) << '\n'
     << "seed " << s.seed << '\n'
     << "offset_scale " << num(s.offset_scale) << '\n'
     << "offset_center " << num(s.offset_center) << '\n'
     << "samples " << s.samples << '\n'
     << "rotate " << (s.rotate ? 1 : 0) << '\n';
}

inline ProblemSpec read_instance(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key, value;
    if (!(ls >> key >> value)) throw InvalidArgument("instance file line " + std::to_string(lineno) + " malformed");
    kv[key] = value;
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw InvalidArgument(std::string("instance file missing '") + key + "'");
    return it->second;
  };
  ProblemSpec s;
  s.family = need("family");
  s.m = std::stoi(need("m"));
  s.n = std::stoi(need("n"));
  s.mu = std::stod(need("mu"));
  s.L = std::stod(need("L"));
  s.seed = std::stoull(need("seed"));
  if (kv.count("offset_scale")) s.offset_scale = std::stod(kv["offset_scale"]);
  if (kv.count("offset_center")) s.offset_center = std::stod(kv["offset_center"]);
  if (kv.count("samples")) s.samples = std::stoi(kv["samples"]);
  if (kv.count("rotate")) s.rotate = kv["rotate"] != "0";
  return s;
}

}  // namespace decopt
