#pragma once

// Method dispatch over an execution strategy, the centralized/simulated
// equivalence comparator and locality auditing.

#include "decopt/constrained.hpp"
#include "decopt/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace decopt {

enum class Method { stm, bstm, pstm, pbstm, pdstm, spdstm, dual_sc };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::stm: return "stm";
    case Method::bstm: return "bstm";
    case Method::pstm: return "pstm";
    case Method::pbstm: return "pbstm";
    case Method::pdstm: return "pdstm";
    case Method::spdstm: return "spdstm";
    case Method::dual_sc: return "dual_sc";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
  for (Method m : {Method::stm, Method::bstm, Method::pstm, Method::pbstm, Method::pdstm, Method::spdstm,
                   Method::dual_sc})
    if (s == to_string(m)) return m;
  if (s == "dual_sc_solve") return Method::dual_sc;
  return std::nullopt;
}

inline bool is_stochastic(Method m) { return m == Method::bstm || m == Method::pbstm || m == Method::spdstm; }
inline bool uses_network(Method m) { return m != Method::stm && m != Method::bstm; }

/// Runs one method on the given network.
inline MethodResult run_method(Method method, const ProblemInstance& p, Network& net,
                               const StochasticOracleConfig& cfg, const MethodOptions& o) {
  switch (method) {
    case Method::stm: return run_stm(p, o);
    case Method::bstm: return run_bstm(p, cfg, o, net.threads());
    case Method::pstm: return pstm(p, net, o);
    case Method::pbstm: return pbstm(p, net, cfg, o);
    case Method::pdstm: return pdstm(p, net, o);
    case Method::spdstm: return spdstm(p, net, cfg, o);
    case Method::dual_sc: return dual_sc_solve(p, net, o);
  }
  throw InvalidArgument("unknown method");
}

struct Execution {
  MethodResult result;
  long rounds = 0;
  std::vector<long> oracle_calls;
  std::vector<AccessRecord> access;
  std::vector<RoundLog> round_log;
  bool locality_ok = true;
};

namespace detail {

inline void fill_counters(Method method, const MethodResult& r, const Network& net, Execution& ex) {
  ex.rounds = net.rounds();
  ex.oracle_calls = net.oracle_calls();
  if (!uses_network(method)) {
    long total = 0;
    for (std::size_t i = 1; i < r.schedule.batch_sizes.size(); ++i) total += r.schedule.batch_sizes[i];
    std::fill(ex.oracle_calls.begin(), ex.oracle_calls.end(), total);
  }
}

}  // namespace detail

/// Runs the method with the W applications realized as message exchanges.
/// `sink` (optional) receives the simulated network before it is destroyed.
template <class Sink = std::nullptr_t>
Execution simulate(Method method, const ProblemInstance& p, const LaplacianGraph& g, const StochasticOracleConfig& cfg,
                   const MethodOptions& o, const SimulationConfig& sim = {}, Sink&& sink = nullptr) {
  SimulatedNetwork net(g, p.n(), sim);
  Execution ex;
  ex.result = run_method(method, p, net, cfg, o);
  detail::fill_counters(method, ex.result, net, ex);
  ex.access = net.access_log();
  ex.round_log = net.round_log();
  ex.locality_ok = audit_locality(ex.access, g);
  if (!ex.locality_ok) throw TopologyViolation("a node read state outside its neighbourhood");
  if constexpr (!std::is_same_v<std::decay_t<Sink>, std::nullptr_t>) sink(net);
  return ex;
}

inline Execution run_centralized(Method method, const ProblemInstance& p, const LaplacianGraph& g,
                                 const StochasticOracleConfig& cfg, const MethodOptions& o, int threads = 1) {
  CentralizedNetwork net(g, p.n(), threads);
  Execution ex;
  ex.result = run_method(method, p, net, cfg, o);
  detail::fill_counters(method, ex.result, net, ex);
  return ex;
}

/// Largest absolute coordinate difference between two recorded runs;
/// infinite if their shapes differ.
inline double max_deviation(const MethodResult& a, const MethodResult& b) {
  const double inf = std::numeric_limits<double>::infinity();
  if (a.iterates.size() != b.iterates.size()) return inf;
  double dev = 0.0;
  auto upd = [&](const Vector& u, const Vector& v) {
    if (u.size() != v.size()) {
      dev = inf;
      return;
    }
    if (u.size() > 0) dev = std::max(dev, (u - v).cwiseAbs().maxCoeff());
  };
  for (std::size_t i = 0; i < a.iterates.size(); ++i) upd(a.iterates[i], b.iterates[i]);
  upd(a.x.data(), b.x.data());
  if (a.y_hat.has_value() != b.y_hat.has_value()) return inf;
  if (a.y_hat) upd(a.y_hat->data(), b.y_hat->data());
  return dev;
}

/// Runs the method centrally with seed_central and simulated with seed_sim and
/// returns the largest deviation over all recorded iterates.
inline double equivalence_check(Method method, const ProblemInstance& p, const LaplacianGraph& g,
                                StochasticOracleConfig cfg, MethodOptions o, std::uint64_t seed_central,
                                std::uint64_t seed_sim, int threads = 1) {
  o.record_iterates = true;
  cfg.master_seed = seed_central;
  const Execution central = run_centralized(method, p, g, cfg, o, threads);
  cfg.master_seed = seed_sim;
  SimulationConfig sim;
  sim.threads = threads;
  const Execution simulated = simulate(method, p, g, cfg, o, sim);
  if (central.rounds != simulated.rounds) return std::numeric_limits<double>::infinity();
  return max_deviation(central.result, simulated.result);
}

}  // namespace decopt
