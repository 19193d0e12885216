#include "decopt/acceptance.hpp"
#include "decopt/bench.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  int seeds = 0;
  int threads = 0;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "YAML experiment config")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (overrides output.dir)");
  cmd->add_option("--seeds", c.seeds, "use seeds 1..k")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", c.threads, "worker threads (overrides output.threads)")->check(CLI::PositiveNumber);
  cmd->add_option("--override", c.overrides, "section.key=value, repeatable");
}

decopt::ExperimentConfig load(const Common& c) {
  decopt::ExperimentConfig cfg = decopt::load_config(c.config, c.overrides, c.seeds);
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.threads > 0) cfg.threads = c.threads;
  return cfg;
}

int cmd_spectra(const Common& c) {
  const decopt::ExperimentConfig cfg = load(c);
  const decopt::LaplacianGraph g = decopt::make_graph(cfg.graph);
  nlohmann::ordered_json j;
  j["topology"] = cfg.graph.topology;
  j["m"] = g.m();
  j["edges"] = g.edges().size();
  j["lambda_max"] = g.lambda_max();
  j["lambda_min_plus"] = g.lambda_min_plus();
  j["chi"] = g.chi();
  int dmin = g.m() > 0 ? g.degree(0) : 0, dmax = dmin;
  for (int k = 0; k < g.m(); ++k) {
    dmin = std::min(dmin, g.degree(k));
    dmax = std::max(dmax, g.degree(k));
  }
  j["degree_min"] = dmin;
  j["degree_max"] = dmax;
  std::cout << j.dump(2) << '\n';
  if (!c.out.empty()) {
    std::filesystem::create_directories(c.out);
    decopt::write_text(std::filesystem::path(c.out) / "spectra.json", j.dump(2) + "\n");
  }
  return 0;
}

int cmd_run(const Common& c) {
  const decopt::ExperimentConfig cfg = load(c);
  const decopt::RunOutput out = decopt::run_experiment(cfg);
  decopt::write_run_output(cfg, out, cfg.out_dir);
  for (const auto& s : out.seeds) {
    const auto& r = s.report;
    std::cout << "seed " << r.seed << ": ";
    if (!r.error.empty()) {
      std::cout << "error " << r.error << '\n';
      continue;
    }
    std::cout << (r.success ? "certified" : "not certified") << ", rounds " << r.rounds << ", oracle calls "
              << decopt::max_oracle_calls(r);
    if (r.duality_gap) std::cout << ", gap " << *r.duality_gap;
    if (r.f_gap) std::cout << ", f_gap " << *r.f_gap;
    std::cout << ", feasibility " << r.feasibility << '\n';
  }
  std::cout << "success rate " << out.aggregate.success_rate << " (" << out.aggregate.successes << "/"
            << out.aggregate.runs << "), written to " << cfg.out_dir << '\n';
  return 0;
}

int cmd_sweep(const Common& c) {
  const decopt::ExperimentConfig cfg = load(c);
  const decopt::SweepOutput out = decopt::run_sweep(cfg);
  decopt::write_sweep_output(out, cfg.out_dir);
  std::cout << decopt::sweep_csv(out);
  if (out.fit)
    std::cout << "fit " << out.fit_target << " vs " << out.axis << ": slope " << out.fit->slope << ", r^2 "
              << out.fit->r_squared << '\n';
  else
    std::cout << "no fit: " << out.fit_error << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized first-order methods: experiments and checks"};
  app.require_subcommand(1);
  Common spectra, run, sweep;
  add_common(app.add_subcommand("spectra", "graph diagnostics for the config's graph"), spectra);
  add_common(app.add_subcommand("run", "run the configured method for every seed"), run);
  add_common(app.add_subcommand("sweep", "run a grid along one axis and fit a rate"), sweep);
  app.add_subcommand("check", "run the acceptance suite");
  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("spectra")) return cmd_spectra(spectra);
    if (app.got_subcommand("run")) return cmd_run(run);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep);
    if (app.got_subcommand("check")) return decopt::acceptance::run_all(std::cout) == 0 ? 0 : 1;
  } catch (const decopt::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
