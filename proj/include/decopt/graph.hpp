#pragma once

// Communication graphs, their Laplacians and the block operator W = Wbar (x) I_n.

#include "decopt/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace decopt {

/// m blocks of dimension n stored contiguously; block k belongs to node k.
class StackedVector {
 public:
  StackedVector() = default;
  StackedVector(int m, int n) : m_(m), n_(n), data_(Vector::Zero(static_cast<Eigen::Index>(m) * n)) {}
  StackedVector(int m, int n, Vector data) : m_(m), n_(n), data_(std::move(data)) {
    if (data_.size() != static_cast<Eigen::Index>(m) * n)
      throw DimensionMismatch("stacked data length " + std::to_string(data_.size()) +
                              " != m*n = " + std::to_string(m * n));
  }

  /// All m blocks equal to x.
  static StackedVector consensus(int m, const Vector& x) {
    StackedVector v(m, static_cast<int>(x.size()));
    for (int k = 0; k < m; ++k) v.block(k) = x;
    return v;
  }

  int m() const { return m_; }
  int n() const { return n_; }
  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  Eigen::VectorBlock<Vector> block(int k) { return data_.segment(static_cast<Eigen::Index>(k) * n_, n_); }
  Eigen::VectorBlock<const Vector> block(int k) const {
    return data_.segment(static_cast<Eigen::Index>(k) * n_, n_);
  }

  Vector mean_block() const {
    Vector mean = Vector::Zero(n_);
    for (int k = 0; k < m_; ++k) mean += block(k);
    return mean / static_cast<double>(m_);
  }

 private:
  int m_ = 0;
  int n_ = 0;
  Vector data_;
};

struct SpectralOptions {
  int dense_limit = 512;        // dense eigendecomposition up to this many nodes
  int max_iterations = 2000;    // Lanczos steps beyond dense_limit
  double tolerance = 1e-11;     // relative Ritz residual
  double kernel_tolerance = 1e-10;  // eigenvalues below this * lambda_max are zero
};

struct SpectralBounds {
  double lambda_max = 0.0;
  double lambda_min_plus = 0.0;
  double chi = 1.0;
};

/// Undirected connected graph with its (unweighted) Laplacian.
///
/// Immutable after construction. For m == 1 the Laplacian is the 1x1 zero
/// matrix; lambda_max = lambda_min_plus = 0 and chi is defined as 1.
class LaplacianGraph {
 public:
  int m() const { return m_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  /// Neighbours of node i in increasing id order.
  const std::vector<int>& neighbors(int i) const { return neighbors_[static_cast<std::size_t>(i)]; }
  int degree(int i) const { return static_cast<int>(neighbors(i).size()); }
  bool adjacent(int i, int j) const {
    const auto& nb = neighbors(i);
    return std::binary_search(nb.begin(), nb.end(), j);
  }
  double lambda_max() const { return spectra_.lambda_max; }
  double lambda_min_plus() const { return spectra_.lambda_min_plus; }
  double chi() const { return spectra_.chi; }
  const SpectralBounds& spectra() const { return spectra_; }

  /// Dense m x m Laplacian (built on demand).
  Matrix laplacian() const {
    Matrix w = Matrix::Zero(m_, m_);
    for (auto [u, v] : edges_) {
      w(u, v) = -1.0;
      w(v, u) = -1.0;
      w(u, u) += 1.0;
      w(v, v) += 1.0;
    }
    return w;
  }

  /// Laplacian stencil applied to a scalar per node: out_i = deg(i) v_i - sum_{j~i} v_j.
  void apply(const Vector& v, Vector& out) const {
    out.resize(m_);
    for (int i = 0; i < m_; ++i) {
      double acc = static_cast<double>(degree(i)) * v[i];
      for (int j : neighbors(i)) acc -= v[j];
      out[i] = acc;
    }
  }

 private:
  friend LaplacianGraph laplacian_from_edges(int, const std::vector<std::pair<int, int>>&,
                                             const SpectralOptions&);
  int m_ = 0;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> neighbors_;
  SpectralBounds spectra_;
};

namespace detail {

inline bool is_connected(int m, const std::vector<std::vector<int>>& neighbors) {
  if (m <= 1) return true;
  std::vector<char> seen(static_cast<std::size_t>(m), 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : neighbors[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        ++reached;
        frontier.push(v);
      }
    }
  }
  return reached == m;
}

inline SpectralBounds bounds_from_sorted(const Vector& eig, double kernel_tolerance) {
  SpectralBounds out;
  out.lambda_max = eig[eig.size() - 1];
  const double cut = kernel_tolerance * out.lambda_max;
  int zeros = 0;
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    if (eig[i] <= cut) {
      ++zeros;
    } else {
      out.lambda_min_plus = eig[i];
      break;
    }
  }
  if (zeros > 1) throw DisconnectedGraph("zero eigenvalue has multiplicity " + std::to_string(zeros));
  out.chi = out.lambda_max / out.lambda_min_plus;
  return out;
}

// Lanczos with full reorthogonalization restricted to the complement of the
// all-ones vector; the extreme Ritz values converge to lambda_max and
// lambda_min_plus.
template <class ApplyFn>
SpectralBounds lanczos_bounds(int m, ApplyFn&& apply, const SpectralOptions& opts) {
  const int max_steps = std::min(m - 1, opts.max_iterations);
  std::mt19937_64 gen(0x5eed5eedULL);
  std::normal_distribution<double> normal;
  Matrix basis(m, max_steps + 1);
  Vector q(m);
  for (int i = 0; i < m; ++i) q[i] = normal(gen);
  q.array() -= q.mean();
  q.normalize();
  basis.col(0) = q;
  std::vector<double> alpha;
  std::vector<double> beta;
  Vector w(m);
  for (int j = 0; j < max_steps; ++j) {
    apply(basis.col(j), w);
    const double a = basis.col(j).dot(w);
    alpha.push_back(a);
    w -= a * basis.col(j);
    if (j > 0) w -= beta.back() * basis.col(j - 1);
    for (int pass = 0; pass < 2; ++pass) {
      w.array() -= w.mean();
      w -= basis.leftCols(j + 1) * (basis.leftCols(j + 1).transpose() * w);
    }
    const double b = w.norm();
    const bool exhausted = (j + 1 == max_steps) || b < 1e-14 * std::abs(alpha.front() + 1.0);
    const bool check = exhausted || (j % 8 == 7);
    if (check) {
      const int k = j + 1;
      Vector diag = Eigen::Map<Vector>(alpha.data(), k);
      Vector sub(std::max(k - 1, 0));
      for (int i = 0; i + 1 < k; ++i) sub[i] = beta[static_cast<std::size_t>(i)];
      Eigen::SelfAdjointEigenSolver<Matrix> tri;
      tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
      const Vector& theta = tri.eigenvalues();
      const double top = theta[k - 1];
      const double bottom = theta[0];
      const double res_top = b * std::abs(tri.eigenvectors()(k - 1, k - 1));
      const double res_bottom = b * std::abs(tri.eigenvectors()(k - 1, 0));
      const bool full_space = (k == m - 1) || b < 1e-14 * std::abs(top);
      if (full_space || (res_top <= opts.tolerance * top && res_bottom <= opts.tolerance * top)) {
        SpectralBounds out;
        out.lambda_max = top;
        out.lambda_min_plus = bottom;
        if (bottom <= opts.kernel_tolerance * top)
          throw DisconnectedGraph("lambda_2 below kernel tolerance");
        out.chi = top / bottom;
        return out;
      }
      if (exhausted)
        throw NotConverged("Lanczos did not reach tolerance within " + std::to_string(max_steps) +
                           " steps");
    }
    beta.push_back(b);
    basis.col(j + 1) = w / b;
  }
  throw NotConverged("Lanczos budget exhausted");
}

}  // namespace detail

/// Spectra of a symmetric PSD matrix with the all-ones vector in its kernel.
inline SpectralBounds spectral_bounds(const Matrix& laplacian, const SpectralOptions& opts = {}) {
  const auto m = static_cast<int>(laplacian.rows());
  if (laplacian.cols() != m) throw DimensionMismatch("Laplacian must be square");
  if (m == 1) return SpectralBounds{0.0, 0.0, 1.0};
  if (m <= opts.dense_limit) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(laplacian, Eigen::EigenvaluesOnly);
    return detail::bounds_from_sorted(solver.eigenvalues(), opts.kernel_tolerance);
  }
  return detail::lanczos_bounds(
      m, [&](const auto& v, Vector& out) { out.noalias() = laplacian * v; }, opts);
}

/// Builds the Laplacian of an undirected graph; duplicate edges are collapsed.
inline LaplacianGraph laplacian_from_edges(int m, const std::vector<std::pair<int, int>>& edges,
                                           const SpectralOptions& opts = {}) {
  if (m < 1) throw InvalidArgument("graph needs at least one node");
  std::set<std::pair<int, int>> unique;
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= m || v >= m)
      throw InvalidEdge("edge (" + std::to_string(u) + "," + std::to_string(v) +
                        ") out of range for m=" + std::to_string(m));
    if (u == v) throw InvalidEdge("self-loop at node " + std::to_string(u));
    unique.emplace(std::min(u, v), std::max(u, v));
  }
  LaplacianGraph g;
  g.m_ = m;
  g.edges_.assign(unique.begin(), unique.end());
  g.neighbors_.assign(static_cast<std::size_t>(m), {});
  for (auto [u, v] : g.edges_) {
    g.neighbors_[static_cast<std::size_t>(u)].push_back(v);
    g.neighbors_[static_cast<std::size_t>(v)].push_back(u);
  }
  for (auto& nb : g.neighbors_) std::sort(nb.begin(), nb.end());
  if (!detail::is_connected(m, g.neighbors_)) throw DisconnectedGraph("graph is not connected");
  if (m == 1) {
    g.spectra_ = SpectralBounds{0.0, 0.0, 1.0};
  } else if (m <= opts.dense_limit) {
    g.spectra_ = spectral_bounds(g.laplacian(), opts);
  } else {
    g.spectra_ = detail::lanczos_bounds(
        m, [&](const auto& v, Vector& out) { g.apply(Vector(v), out); }, opts);
  }
  return g;
}

/// out block k = sum_j Wbar_kj v_j, evaluated as deg(k) v_k - sum_{j~k} v_j with
/// neighbours in increasing id order.
inline void apply_block(const LaplacianGraph& g, const Vector& v, Vector& out, int n) {
  if (v.size() != static_cast<Eigen::Index>(g.m()) * n)
    throw DimensionMismatch("stacked vector length " + std::to_string(v.size()) + " != m*n");
  out.resize(v.size());
  for (int k = 0; k < g.m(); ++k) {
    auto dst = out.segment(static_cast<Eigen::Index>(k) * n, n);
    dst = static_cast<double>(g.degree(k)) * v.segment(static_cast<Eigen::Index>(k) * n, n);
    for (int j : g.neighbors(k)) dst -= v.segment(static_cast<Eigen::Index>(j) * n, n);
  }
}

inline StackedVector apply_block(const LaplacianGraph& g, const StackedVector& v) {
  if (v.m() != g.m())
    throw DimensionMismatch("vector has " + std::to_string(v.m()) + " blocks, graph has " +
                            std::to_string(g.m()) + " nodes");
  StackedVector out(v.m(), v.n());
  apply_block(g, v.data(), out.data(), v.n());
  return out;
}

/// ||sqrt(W) v|| computed as sqrt(v' W v).
inline double consensus_residual(const LaplacianGraph& g, const StackedVector& v) {
  const StackedVector wv = apply_block(g, v);
  return std::sqrt(std::max(0.0, v.data().dot(wv.data())));
}

/// Dense principal square root of Wbar. Validation use only: every method works
/// with W itself.
inline Matrix sqrt_laplacian(const LaplacianGraph& g) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(g.laplacian());
  const Vector root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().transpose();
}

/// (sqrt(Wbar) (x) I_n) v for validation oracles.
inline StackedVector apply_sqrt_block(const Matrix& sqrt_w, const StackedVector& v) {
  StackedVector out(v.m(), v.n());
  for (int k = 0; k < v.m(); ++k)
    for (int j = 0; j < v.m(); ++j)
      if (sqrt_w(k, j) != 0.0) out.block(k) += sqrt_w(k, j) * v.block(j);
  return out;
}

// Generators --------------------------------------------------------------

inline LaplacianGraph path_graph(int m) {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i + 1 < m; ++i) e.emplace_back(i, i + 1);
  return laplacian_from_edges(m, e);
}

inline LaplacianGraph cycle_graph(int m) {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i + 1 < m; ++i) e.emplace_back(i, i + 1);
  if (m >= 3) e.emplace_back(m - 1, 0);
  return laplacian_from_edges(m, e);
}

inline LaplacianGraph star_graph(int m) {
  std::vector<std::pair<int, int>> e;
  for (int i = 1; i < m; ++i) e.emplace_back(0, i);
  return laplacian_from_edges(m, e);
}

inline LaplacianGraph complete_graph(int m) {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) e.emplace_back(i, j);
  return laplacian_from_edges(m, e);
}

/// Points uniform in the unit square, joined when closer than radius;
/// resampled until connected.
inline LaplacianGraph random_geometric_graph(int m, double radius, std::uint64_t seed,
                                             int max_attempts = 1000) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<std::pair<double, double>> pts(static_cast<std::size_t>(m));
    for (auto& p : pts) p = {unif(gen), unif(gen)};
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) {
        const double dx = pts[static_cast<std::size_t>(i)].first - pts[static_cast<std::size_t>(j)].first;
        const double dy = pts[static_cast<std::size_t>(i)].second - pts[static_cast<std::size_t>(j)].second;
        if (dx * dx + dy * dy <= radius * radius) e.emplace_back(i, j);
      }
    try {
      return laplacian_from_edges(m, e);
    } catch (const DisconnectedGraph&) {
    }
  }
  throw DisconnectedGraph("no connected geometric graph after " + std::to_string(max_attempts) +
                          " attempts");
}

/// G(m, p) rejection-sampled for connectivity.
inline LaplacianGraph erdos_renyi_graph(int m, double p, std::uint64_t seed, int max_attempts = 1000) {
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution coin(p);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j)
        if (coin(gen)) e.emplace_back(i, j);
    try {
      return laplacian_from_edges(m, e);
    } catch (const DisconnectedGraph&) {
    }
  }
  throw DisconnectedGraph("no connected Erdos-Renyi graph after " + std::to_string(max_attempts) +
                          " attempts");
}

// Plain-text graph format: first line "m", then one "i j" line per edge.

inline void write_graph(std::ostream& os, const LaplacianGraph& g) {
  os << g.m() << '\n';
  for (auto [u, v] : g.edges()) os << u << ' ' << v << '\n';
}

inline LaplacianGraph read_graph(std::istream& is) {
  int m = 0;
  if (!(is >> m)) throw InvalidArgument("graph file: missing node count");
  std::vector<std::pair<int, int>> edges;
  int u = 0, v = 0;
  while (is >> u) {
    if (!(is >> v)) throw InvalidArgument("graph file: dangling endpoint");
    edges.emplace_back(u, v);
  }
  if (!is.eof()) throw InvalidArgument("graph file: malformed edge line");
  return laplacian_from_edges(m, edges);
}

}  // namespace decopt
