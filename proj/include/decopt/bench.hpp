#pragma once

// Configuration-driven experiment runner.

#include "decopt/report.hpp"
#include "decopt/simulation.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace decopt {

struct GraphSpec {
  std::string topology = "path";
  int m = 2;
  double radius = 0.5;    // geometric
  double p = 0.5;         // erdos_renyi
  std::uint64_t seed = 0;
};

struct SweepSpec {
  std::string axis;  // N | chi | L_over_mu | eps | sigma
  std::vector<double> values;
  std::string fit = "rounds";  // rounds | oracle_calls | iterations | f_gap | feasibility | duality_gap
};

struct ExperimentConfig {
  ProblemSpec problem;
  GraphSpec graph;
  Method method = Method::pdstm;
  MethodOptions options;
  StochasticOracleConfig stochastic;
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir = "out";
  int threads = 1;
  bool write_traces = true;
  bool event_log = false;
  std::optional<SweepSpec> sweep;
};

namespace detail {

inline std::string where(const YAML::Node& n) {
  const YAML::Mark mk = n.Mark();
  return mk.line >= 0 ? "line " + std::to_string(mk.line + 1) : "override or default";
}

[[noreturn]] inline void config_fail(const YAML::Node& n, const std::string& field, const std::string& why) {
  throw ConfigError(where(n) + ": field '" + field + "': " + why);
}

template <class T>
T scalar_as(const YAML::Node& n, const std::string& field, const char* kind) {
  if (!n.IsScalar()) config_fail(n, field, std::string("expected ") + kind);
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    config_fail(n, field, std::string("expected ") + kind + ", got '" + n.Scalar() + "'");
  }
}

class Section {
 public:
  Section(const YAML::Node& root, std::string name) : name_(std::move(name)), node_(root[name_]) {
    if (node_ && !node_.IsMap()) config_fail(node_, name_, "expected a mapping");
  }

  template <class T>
  void read(const char* key, T& dst, const char* kind) {
    seen_.insert(key);
    if (!node_) return;
    const YAML::Node v = node_[key];
    if (v) dst = scalar_as<T>(v, field(key), kind);
  }

  YAML::Node get(const char* key) {
    seen_.insert(key);
    return node_ ? node_[key] : YAML::Node();
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

  void reject_unknown() const {
    if (!node_) return;
    for (const auto& kv : node_) {
      const std::string k = kv.first.as<std::string>();
      if (!seen_.count(k)) config_fail(kv.first, field(k), "unknown key");
    }
  }

 private:
  std::string name_;
  YAML::Node node_;
  std::set<std::string> seen_;
};

// The key's node, else the section's node (for its line), else an empty node.
inline YAML::Node child(const YAML::Node& section, const char* key) {
  if (section && section.IsMap()) {
    const YAML::Node v = section[key];
    if (v) return v;
  }
  return section ? section : YAML::Node();
}

inline void require(bool ok, const YAML::Node& n, const std::string& field, const std::string& why) {
  if (!ok) config_fail(n, field, why);
}

}  // namespace detail

/// Applies "section.key=value" to the YAML tree; the value is parsed as YAML.
inline void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
    throw ConfigError("override '" + assignment + "': key must be section.key");
  const std::string section = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  YAML::Node parsed;
  try {
    parsed = YAML::Load(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
  if (!root.IsMap() && !root.IsNull()) throw ConfigError("override '" + assignment + "': config root is not a mapping");
  root[section][key] = parsed;
}

inline ExperimentConfig parse_config(const YAML::Node& root) {
  using detail::require;
  if (root && !root.IsNull() && !root.IsMap()) detail::config_fail(root, "<root>", "expected a mapping");
  static const std::set<std::string> sections{"problem", "graph", "method", "stochastic",
                                              "budgets", "output",  "seeds",  "sweep"};
  if (root.IsMap())
    for (const auto& kv : root) {
      const std::string k = kv.first.as<std::string>();
      if (!sections.count(k)) detail::config_fail(kv.first, k, "unknown section");
    }

  ExperimentConfig c;

  detail::Section pr(root, "problem");
  pr.read("family", c.problem.family, "a string");
  int pm = -1;
  pr.read("m", pm, "an integer");
  pr.read("n", c.problem.n, "an integer");
  pr.read("mu", c.problem.mu, "a number");
  pr.read("L", c.problem.L, "a number");
  pr.read("seed", c.problem.seed, "an unsigned integer");
  pr.read("offset_scale", c.problem.offset_scale, "a number");
  pr.read("offset_center", c.problem.offset_center, "a number");
  pr.read("samples", c.problem.samples, "an integer");
  pr.read("rotate", c.problem.rotate, "a boolean");
  pr.reject_unknown();
  const YAML::Node pnode = root["problem"];
  require(c.problem.family == "quadratic" || c.problem.family == "logistic", detail::child(pnode, "family"), "problem.family",
          "unknown family '" + c.problem.family + "' (quadratic | logistic)");
  require(c.problem.n >= 1, detail::child(pnode, "n"), "problem.n", "must be >= 1");
  require(c.problem.mu >= 0.0, detail::child(pnode, "mu"), "problem.mu", "must be >= 0");
  require(c.problem.L > 0.0, detail::child(pnode, "L"), "problem.L", "must be > 0");
  require(c.problem.mu <= c.problem.L, detail::child(pnode, "mu"), "problem.mu", "must not exceed problem.L");
  require(c.problem.samples >= 1, detail::child(pnode, "samples"), "problem.samples", "must be >= 1");

  detail::Section gr(root, "graph");
  gr.read("topology", c.graph.topology, "a string");
  int gm = -1;
  gr.read("m", gm, "an integer");
  gr.read("radius", c.graph.radius, "a number");
  gr.read("p", c.graph.p, "a number");
  gr.read("seed", c.graph.seed, "an unsigned integer");
  gr.reject_unknown();
  const YAML::Node gnode = root["graph"];
  static const std::set<std::string> topologies{"path", "cycle", "star", "complete", "geometric", "erdos_renyi"};
  require(topologies.count(c.graph.topology) > 0, detail::child(gnode, "topology"), "graph.topology",
          "unknown topology '" + c.graph.topology + "' (path | cycle | star | complete | geometric | erdos_renyi)");
  if (gm < 0 && pm < 0) gm = pm = 2;
  if (gm < 0) gm = pm;
  if (pm < 0) pm = gm;
  require(gm == pm, detail::child(gnode, "m"), "graph.m", "differs from problem.m");
  require(gm >= 1, detail::child(gnode, "m"), "graph.m", "must be >= 1");
  c.graph.m = c.problem.m = gm;

  detail::Section me(root, "method");
  std::string name = "pdstm";
  me.read("name", name, "a string");
  const YAML::Node mnode = root["method"];
  const auto method = parse_method(name);
  require(method.has_value(), detail::child(mnode, "name"), "method.name",
          "unknown method '" + name + "' (stm | bstm | pstm | pbstm | pdstm | spdstm | dual_sc)");
  c.method = *method;
  std::string mode = "composite";
  me.read("mode", mode, "a string");
  require(mode == "composite" || mode == "fused", detail::child(mnode, "mode"), "method.mode", "expected composite | fused");
  c.options.mode = mode == "fused" ? PenaltyMode::fused : PenaltyMode::composite;
  me.read("eps", c.options.eps, "a number");
  me.read("beta", c.options.beta, "a number");
  me.read("iterations", c.options.iterations, "an integer");
  me.read("n_constant", c.options.n_constant, "a number");
  me.read("batch_constant", c.options.batch_constant, "a number");
  me.read("stop_on_target", c.options.stop_on_target, "a boolean");
  std::string radicand = "printed";
  me.read("radicand", radicand, "a string");
  require(radicand == "printed" || radicand == "squared", detail::child(mnode, "radicand"), "method.radicand",
          "expected printed | squared");
  c.options.stm.radicand = radicand == "squared" ? Radicand::squared : Radicand::printed;
  std::string zr = "dual_averaging";
  me.read("z_rule", zr, "a string");
  require(zr == "dual_averaging" || zr == "accumulated" || zr == "literal", detail::child(mnode, "z_rule"), "method.z_rule",
          "expected dual_averaging | accumulated | literal");
  c.options.stm.z_rule = zr == "accumulated" ? ZStepRule::accumulated
                         : zr == "literal"   ? ZStepRule::literal
                                             : ZStepRule::dual_averaging;
  me.reject_unknown();
  require(c.options.eps > 0.0, detail::child(mnode, "eps"), "method.eps", "must be > 0");
  require(c.options.beta > 0.0 && c.options.beta < 1.0, detail::child(mnode, "beta"), "method.beta", "must lie in (0, 1)");
  require(c.options.iterations >= 0, detail::child(mnode, "iterations"), "method.iterations", "must be >= 0");
  require(c.options.n_constant > 0.0, detail::child(mnode, "n_constant"), "method.n_constant", "must be > 0");
  require(c.options.batch_constant > 0.0, detail::child(mnode, "batch_constant"), "method.batch_constant", "must be > 0");

  detail::Section st(root, "stochastic");
  st.read("sigma", c.stochastic.sigma, "a number");
  st.read("sigma_phi", c.stochastic.sigma_phi, "a number");
  st.read("delta_bias", c.stochastic.delta_bias, "a number");
  st.reject_unknown();
  const YAML::Node snode = root["stochastic"];
  require(c.stochastic.sigma >= 0.0, detail::child(snode, "sigma"), "stochastic.sigma", "must be >= 0");
  require(c.stochastic.sigma_phi >= 0.0, detail::child(snode, "sigma_phi"), "stochastic.sigma_phi", "must be >= 0");

  detail::Section bu(root, "budgets");
  bu.read("max_iterations", c.options.max_iterations, "an integer");
  bu.read("inner_budget", c.options.inner_budget, "an integer");
  bu.read("dual_budget_factor", c.options.dual_budget_factor, "a number");
  bu.read("R_safety", c.options.R_safety, "a number");
  bu.reject_unknown();
  const YAML::Node bnode = root["budgets"];
  require(c.options.max_iterations >= 1, detail::child(bnode, "max_iterations"), "budgets.max_iterations", "must be >= 1");
  require(c.options.inner_budget >= 1, detail::child(bnode, "inner_budget"), "budgets.inner_budget", "must be >= 1");
  require(c.options.dual_budget_factor > 0.0, detail::child(bnode, "dual_budget_factor"), "budgets.dual_budget_factor",
          "must be > 0");
  require(c.options.R_safety >= 1.0, detail::child(bnode, "R_safety"), "budgets.R_safety", "must be >= 1");

  detail::Section ou(root, "output");
  ou.read("dir", c.out_dir, "a string");
  ou.read("threads", c.threads, "an integer");
  ou.read("traces", c.write_traces, "a boolean");
  ou.read("event_log", c.event_log, "a boolean");
  ou.reject_unknown();
  require(c.threads >= 1, detail::child(root["output"], "threads"), "output.threads", "must be >= 1");

  if (const YAML::Node s = root["seeds"]) {
    c.seeds.clear();
    if (s.IsScalar()) {
      c.seeds.push_back(detail::scalar_as<std::uint64_t>(s, "seeds", "an unsigned integer"));
    } else {
      require(s.IsSequence() && s.size() > 0, s, "seeds", "expected a non-empty list of seeds");
      for (const auto& v : s) c.seeds.push_back(detail::scalar_as<std::uint64_t>(v, "seeds", "an unsigned integer"));
    }
  }

  if (root["sweep"]) {
    detail::Section sw(root, "sweep");
    SweepSpec spec;
    sw.read("axis", spec.axis, "a string");
    sw.read("fit", spec.fit, "a string");
    const YAML::Node vals = sw.get("values");
    sw.reject_unknown();
    const YAML::Node wnode = root["sweep"];
    static const std::set<std::string> axes{"N", "chi", "L_over_mu", "eps", "sigma"};
    require(axes.count(spec.axis) > 0, detail::child(wnode, "axis") ? detail::child(wnode, "axis") : wnode, "sweep.axis",
            "unknown axis '" + spec.axis + "' (N | chi | L_over_mu | eps | sigma)");
    static const std::set<std::string> fits{"rounds", "oracle_calls", "iterations", "f_gap", "feasibility",
                                            "duality_gap"};
    require(fits.count(spec.fit) > 0, detail::child(wnode, "fit"), "sweep.fit", "unknown fit target '" + spec.fit + "'");
    require(vals && vals.IsSequence() && vals.size() >= 2, vals ? vals : wnode, "sweep.values",
            "expected a list of at least two values");
    for (const auto& v : vals) {
      const double x = detail::scalar_as<double>(v, "sweep.values", "a number");
      require(x > 0.0, v, "sweep.values", "values must be positive");
      spec.values.push_back(x);
    }
    c.sweep = spec;
  }
  return c;
}

inline YAML::Node load_yaml(const std::string& path) {
  try {
    return YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read config file '" + path + "'");
  } catch (const YAML::ParserException& e) {
    throw ConfigError(std::string("line ") + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

/// Loads a config file, applies overrides and, if seed_count > 0, replaces
/// the seed list with 1..seed_count.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {},
                                    int seed_count = 0) {
  YAML::Node root = load_yaml(path);
  for (const auto& o : overrides) apply_override(root, o);
  ExperimentConfig c = parse_config(root);
  if (seed_count > 0) {
    c.seeds.clear();
    for (int i = 1; i <= seed_count; ++i) c.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::ParserException& e) {
    throw ConfigError(std::string("line ") + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

/// Canonical form of everything that influences a run's numbers. Output
/// location, thread count and the seed list are excluded.
inline nlohmann::ordered_json canonical_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  const ProblemSpec& p = c.problem;
  j["problem"] = {{"family", p.family},           {"m", p.m},
                  {"n", p.n},                     {"mu", format_double(p.mu)},
                  {"L", format_double(p.L)},      {"seed", p.seed},
                  {"offset_scale", format_double(p.offset_scale)},
                  {"offset_center", format_double(p.offset_center)},
                  {"samples", p.samples},         {"rotate", p.rotate}};
  j["graph"] = {{"topology", c.graph.topology},
                {"m", c.graph.m},
                {"radius", format_double(c.graph.radius)},
                {"p", format_double(c.graph.p)},
                {"seed", c.graph.seed}};
  const MethodOptions& o = c.options;
  j["method"] = {{"name", to_string(c.method)},
                 {"mode", to_string(o.mode)},
                 {"eps", format_double(o.eps)},
                 {"beta", format_double(o.beta)},
                 {"iterations", o.iterations},
                 {"n_constant", format_double(o.n_constant)},
                 {"batch_constant", format_double(o.batch_constant)},
                 {"stop_on_target", o.stop_on_target},
                 {"radicand", o.stm.radicand == Radicand::squared ? "squared" : "printed"},
                 {"z_rule", static_cast<int>(o.stm.z_rule)}};
  j["stochastic"] = {{"sigma", format_double(c.stochastic.sigma)},
                     {"sigma_phi", format_double(c.stochastic.sigma_phi)},
                     {"delta_bias", format_double(c.stochastic.delta_bias)}};
  j["budgets"] = {{"max_iterations", o.max_iterations},
                  {"inner_budget", o.inner_budget},
                  {"dual_budget_factor", format_double(o.dual_budget_factor)},
                  {"R_safety", format_double(o.R_safety)}};
  return j;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {
inline std::string hex_hash(const nlohmann::ordered_json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}
}  // namespace detail

/// Hash of the experiment, shared by all of its seeds.
inline std::string config_hash(const ExperimentConfig& c) { return detail::hex_hash(canonical_json(c)); }

/// Hash of a single run: the experiment plus the seed it ran with.
inline std::string config_hash(const ExperimentConfig& c, std::uint64_t seed) {
  nlohmann::ordered_json j = canonical_json(c);
  j["run_seed"] = seed;
  return detail::hex_hash(j);
}

inline LaplacianGraph make_graph(const GraphSpec& g) {
  if (g.topology == "path") return path_graph(g.m);
  if (g.topology == "cycle") return cycle_graph(g.m);
  if (g.topology == "star") return star_graph(g.m);
  if (g.topology == "complete") return complete_graph(g.m);
  if (g.topology == "geometric") return random_geometric_graph(g.m, g.radius, g.seed);
  if (g.topology == "erdos_renyi") return erdos_renyi_graph(g.m, g.p, g.seed);
  throw ConfigError("field 'graph.topology': unknown topology '" + g.topology + "'");
}

struct SeedOutcome {
  RunReport report;
  std::vector<TraceRow> trace;
  std::string events;  // JSON lines, when the event log is enabled
};

/// Runs one seed; method errors are captured in the report.
inline SeedOutcome run_seed(const ExperimentConfig& c, std::uint64_t seed, int threads = 1) {
  SeedOutcome out;
  const std::string hash = config_hash(c, seed);
  try {
    const LaplacianGraph g = make_graph(c.graph);
    const ProblemInstance p = make_instance(c.problem);
    StochasticOracleConfig cfg = c.stochastic;
    cfg.master_seed = seed;
    SimulationConfig sim;
    sim.threads = threads;
    sim.rng_root = seed;
    sim.event_log = c.event_log;
    const Execution ex = simulate(c.method, p, g, cfg, c.options, sim, [&](const SimulatedNetwork& net) {
      if (!c.event_log) return;
      std::ostringstream os;
      net.write_event_log(os);
      out.events = os.str();
    });
    out.report = make_report(ex, hash, to_string(c.options.mode), seed);
    out.trace = ex.result.trace;
  } catch (const std::exception& e) {
    out.report = RunReport{};
    out.report.config_hash = hash;
    out.report.method = to_string(c.method);
    out.report.mode = to_string(c.options.mode);
    out.report.seed = seed;
    out.report.eps = c.options.eps;
    out.report.error = e.what();
  }
  return out;
}

struct Aggregate {
  std::string config_hash;
  std::string method;
  std::size_t runs = 0;
  std::size_t successes = 0;
  std::size_t errors = 0;
  double success_rate = 0.0;
  double mean_rounds = 0.0;
  double mean_oracle_calls = 0.0;
};

inline long max_oracle_calls(const RunReport& r) {
  return r.oracle_calls_per_node.empty()
             ? 0
             : *std::max_element(r.oracle_calls_per_node.begin(), r.oracle_calls_per_node.end());
}

inline Aggregate aggregate(const std::vector<RunReport>& reports) {
  Aggregate a;
  a.runs = reports.size();
  if (!reports.empty()) {
    a.config_hash = reports.front().config_hash;
    a.method = reports.front().method;
  }
  for (const auto& r : reports) {
    a.successes += r.success ? 1 : 0;
    a.errors += r.error.empty() ? 0 : 1;
    a.mean_rounds += static_cast<double>(r.rounds);
    a.mean_oracle_calls += static_cast<double>(max_oracle_calls(r));
  }
  if (a.runs > 0) {
    const double n = static_cast<double>(a.runs);
    a.success_rate = static_cast<double>(a.successes) / n;
    a.mean_rounds /= n;
    a.mean_oracle_calls /= n;
  }
  return a;
}

inline nlohmann::ordered_json to_json(const Aggregate& a) {
  nlohmann::ordered_json j;
  j["config_hash"] = a.config_hash;
  j["method"] = a.method;
  j["runs"] = a.runs;
  j["successes"] = a.successes;
  j["errors"] = a.errors;
  j["success_rate"] = a.success_rate;
  j["mean_rounds"] = a.mean_rounds;
  j["mean_oracle_calls_per_node"] = a.mean_oracle_calls;
  return j;
}

struct RunOutput {
  std::vector<SeedOutcome> seeds;
  Aggregate aggregate;
};

/// Runs every seed. With several seeds, seeds run in parallel and each
/// simulation is single-threaded.
inline RunOutput run_experiment(const ExperimentConfig& c) {
  RunOutput out;
  out.seeds.resize(c.seeds.size());
  const int outer = c.seeds.size() > 1 ? c.threads : 1;
  const int inner = c.seeds.size() > 1 ? 1 : c.threads;
  parallel_for(c.seeds.size(), outer, [&](std::size_t i) { out.seeds[i] = run_seed(c, c.seeds[i], inner); });
  std::vector<RunReport> reports;
  for (const auto& s : out.seeds) reports.push_back(s.report);
  out.aggregate = aggregate(reports);
  out.aggregate.config_hash = config_hash(c);
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidArgument("cannot write '" + path.string() + "'");
  os << text;
}

inline void write_run_output(const ExperimentConfig& c, const RunOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : out.seeds) {
    const std::string id = std::to_string(s.report.seed);
    write_text(dir / ("report_" + id + ".json"), dump_report(s.report));
    if (c.write_traces) {
      std::ostringstream os;
      write_trace_csv(os, s.trace);
      write_text(dir / ("trace_" + id + ".csv"), os.str());
    }
    if (c.event_log) write_text(dir / ("events_" + id + ".jsonl"), s.events);
  }
  write_text(dir / "aggregate.json", to_json(out.aggregate).dump(2) + "\n");
}

struct RateFit {
  std::vector<std::pair<double, double>> pairs;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least-squares line through (log x, log y).
inline RateFit rate_fit(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 2) throw InvalidArgument("rate_fit needs at least two pairs");
  for (const auto& [x, y] : pairs)
    if (!(x > 0.0) || !(y > 0.0)) throw NonPositiveData("rate_fit needs positive abscissae and ordinates");
  const double n = static_cast<double>(pairs.size());
  double sx = 0, sy = 0;
  for (const auto& [x, y] : pairs) {
    sx += std::log(x);
    sy += std::log(y);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : pairs) {
    const double dx = std::log(x) - mx, dy = std::log(y) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw InvalidArgument("rate_fit needs at least two distinct abscissae");
  RateFit f;
  f.pairs = pairs;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (syy <= 1e-30 * std::max(1.0, my * my)) {
    f.r_squared = 1.0;
  } else {
    double ss_res = 0;
    for (const auto& [x, y] : pairs) {
      const double e = std::log(y) - (f.intercept + f.slope * std::log(x));
      ss_res += e * e;
    }
    f.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return f;
}

inline nlohmann::ordered_json to_json(const RateFit& f) {
  nlohmann::ordered_json j;
  j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& [x, y] : f.pairs) j["pairs"].push_back({x, y});
  j["slope"] = f.slope;
  j["intercept"] = f.intercept;
  j["r_squared"] = f.r_squared;
  return j;
}

struct SweepRow {
  double value = 0.0;
  double abscissa = 0.0;
  SeedOutcome outcome;
};

struct SweepOutput {
  std::string axis;
  std::string fit_target;
  std::vector<SweepRow> rows;
  std::optional<RateFit> fit;
  std::string fit_error;
};

inline ExperimentConfig sweep_point(ExperimentConfig c, const std::string& axis, double v) {
  if (axis == "N") {
    c.options.iterations = static_cast<int>(std::lround(v));
  } else if (axis == "chi") {
    c.graph.m = c.problem.m = static_cast<int>(std::lround(v));
  } else if (axis == "L_over_mu") {
    if (!(c.problem.mu > 0.0)) throw ConfigError("field 'sweep.axis': L_over_mu needs problem.mu > 0");
    c.problem.L = c.problem.mu * v;
  } else if (axis == "eps") {
    c.options.eps = v;
  } else if (axis == "sigma") {
    c.stochastic.sigma = c.stochastic.sigma_phi = v;
  } else {
    throw ConfigError("field 'sweep.axis': unknown axis '" + axis + "'");
  }
  c.sweep.reset();
  return c;
}

inline double sweep_metric(const RunReport& r, const std::string& target) {
  if (target == "rounds") return static_cast<double>(r.rounds);
  if (target == "oracle_calls") return static_cast<double>(max_oracle_calls(r));
  if (target == "iterations") return r.iterations;
  if (target == "f_gap") return r.f_gap.value_or(std::nan(""));
  if (target == "feasibility") return r.feasibility;
  if (target == "duality_gap") return r.duality_gap.value_or(std::nan(""));
  throw InvalidArgument("unknown fit target '" + target + "'");
}

/// Runs the grid with the first seed. The chi axis is plotted against the
/// graph's condition number rather than m.
inline SweepOutput run_sweep(const ExperimentConfig& c) {
  if (!c.sweep) throw ConfigError("field 'sweep': missing sweep section");
  SweepOutput out;
  out.axis = c.sweep->axis;
  out.fit_target = c.sweep->fit;
  out.rows.resize(c.sweep->values.size());
  const std::uint64_t seed = c.seeds.empty() ? 1 : c.seeds.front();
  parallel_for(out.rows.size(), c.threads, [&](std::size_t i) {
    const double v = c.sweep->values[i];
    SweepRow& row = out.rows[i];
    row.value = v;
    row.abscissa = v;
    const ExperimentConfig pc = sweep_point(c, out.axis, v);
    if (out.axis == "chi") {
      try {
        row.abscissa = make_graph(pc.graph).chi();
      } catch (const std::exception&) {
        row.abscissa = std::nan("");
      }
    }
    row.outcome = run_seed(pc, seed, 1);
  });
  std::vector<std::pair<double, double>> pairs;
  for (const auto& row : out.rows)
    if (row.outcome.report.error.empty()) pairs.emplace_back(row.abscissa, sweep_metric(row.outcome.report, out.fit_target));
  try {
    out.fit = rate_fit(pairs);
  } catch (const std::exception& e) {
    out.fit_error = e.what();
  }
  return out;
}

inline constexpr const char* kSweepHeader = "value,abscissa,rounds,oracle_calls_per_node,f_gap,feasibility,duality_gap,iterations,success,error";

inline std::string sweep_csv(const SweepOutput& s) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::ostringstream os;
  os << kSweepHeader << '\n';
  for (const auto& row : s.rows) {
    const RunReport& r = row.outcome.report;
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << format_double(row.value) << ',' << format_double(row.abscissa) << ',' << r.rounds << ','
       << max_oracle_calls(r) << ',' << opt(r.f_gap) << ',' << format_double(r.feasibility) << ','
       << opt(r.duality_gap) << ',' << r.iterations << ',' << (r.success ? 1 : 0) << ',' << err << '\n';
  }
  return os.str();
}

inline void write_sweep_output(const SweepOutput& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "sweep.csv", sweep_csv(s));
  nlohmann::ordered_json j;
  j["axis"] = s.axis;
  j["abscissa"] = s.axis == "chi" ? "chi" : s.axis;
  j["ordinate"] = s.fit_target;
  if (s.fit) {
    j["fit"] = to_json(*s.fit);
    j["error"] = nullptr;
  } else {
    j["fit"] = nullptr;
    j["error"] = s.fit_error;
  }
  write_text(dir / "fit.json", j.dump(2) + "\n");
}

}  // namespace decopt
