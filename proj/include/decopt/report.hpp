#pragma once

// Run reports (JSON) and iteration traces (CSV).

#include "decopt/simulation.hpp"
#include "decopt/stm.hpp"

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace decopt {

struct RunReport {
  std::string config_hash;
  std::string method;
  std::string mode;
  std::uint64_t seed = 0;
  long rounds = 0;
  std::vector<long> oracle_calls_per_node;
  int iterations = 0;
  std::optional<double> duality_gap;
  double feasibility = 0.0;
  std::optional<double> f_gap;
  std::optional<double> grad_norm;
  double R_y = 0.0;
  double eps = 0.0;
  bool success = false;
  bool inner_budget_exceeded = false;
  std::string error;
};

inline RunReport make_report(const Execution& ex, const std::string& config_hash, const std::string& mode,
                             std::uint64_t seed) {
  RunReport r;
  r.config_hash = config_hash;
  r.method = ex.result.method;
  r.mode = mode;
  r.seed = seed;
  r.rounds = ex.rounds;
  r.oracle_calls_per_node = ex.oracle_calls;
  r.iterations = ex.result.iterations;
  r.duality_gap = ex.result.cert.duality_gap;
  r.feasibility = ex.result.cert.feasibility;
  r.f_gap = ex.result.cert.f_gap;
  r.grad_norm = ex.result.grad_norm;
  r.R_y = ex.result.R_y;
  r.eps = ex.result.eps;
  r.success = ex.result.success;
  r.inner_budget_exceeded = ex.result.inner_budget_exceeded;
  return r;
}

inline nlohmann::ordered_json to_json(const RunReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["config_hash"] = r.config_hash;
  j["method"] = r.method;
  j["mode"] = r.mode;
  j["seed"] = r.seed;
  j["rounds"] = r.rounds;
  j["oracle_calls_per_node"] = r.oracle_calls_per_node;
  j["iterations"] = r.iterations;
  j["duality_gap"] = opt(r.duality_gap);
  j["feasibility"] = r.feasibility;
  j["f_gap"] = opt(r.f_gap);
  j["grad_norm"] = opt(r.grad_norm);
  j["R_y"] = r.R_y;
  j["eps"] = r.eps;
  j["success"] = r.success;
  j["inner_budget_exceeded"] = r.inner_budget_exceeded;
  j["error"] = r.error.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.error);
  return j;
}

inline RunReport report_from_json(const nlohmann::ordered_json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  RunReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.rounds = j.at("rounds").get<long>();
  r.oracle_calls_per_node = j.at("oracle_calls_per_node").get<std::vector<long>>();
  r.iterations = j.at("iterations").get<int>();
  r.duality_gap = opt("duality_gap");
  r.feasibility = j.at("feasibility").get<double>();
  r.f_gap = opt("f_gap");
  r.grad_norm = opt("grad_norm");
  r.R_y = j.at("R_y").get<double>();
  r.eps = j.at("eps").get<double>();
  r.success = j.at("success").get<bool>();
  r.inner_budget_exceeded = j.at("inner_budget_exceeded").get<bool>();
  r.error = j.at("error").is_null() ? std::string() : j.at("error").get<std::string>();
  return r;
}

inline std::string dump_report(const RunReport& r) { return to_json(r).dump(2) + "\n"; }

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kTraceHeader = "k,A_k,alpha_k,r_k,f_gap,grad_norm,rounds,oracle_calls";

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows) {
  os << kTraceHeader << '\n';
  for (const auto& t : rows)
    os << t.k << ',' << format_double(t.A) << ',' << format_double(t.alpha) << ',' << t.r << ','
       << format_double(t.f_gap) << ',' << format_double(t.grad_norm) << ',' << t.rounds << ',' << t.oracle_calls
       << '\n';
}

inline std::vector<TraceRow> read_trace_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kTraceHeader) throw InvalidArgument("trace CSV header mismatch");
  std::vector<TraceRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw InvalidArgument("trace CSV row has " + std::to_string(cells.size()) + " cells");
    TraceRow t;
    t.k = std::stoi(cells[0]);
    t.A = std::strtod(cells[1].c_str(), nullptr);
    t.alpha = std::strtod(cells[2].c_str(), nullptr);
    t.r = std::stol(cells[3]);
    t.f_gap = std::strtod(cells[4].c_str(), nullptr);
    t.grad_norm = std::strtod(cells[5].c_str(), nullptr);
    t.rounds = std::stol(cells[6]);
    t.oracle_calls = std::stol(cells[7]);
    rows.push_back(t);
  }
  return rows;
}

}  // namespace decopt
