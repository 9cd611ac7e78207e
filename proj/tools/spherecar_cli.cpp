// Scenario runner. Exit status: 0 completed, 1 configuration or I/O error,
// 2 controller infeasible or diverged, 3 observer out of regime.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spherecar/errors.hpp"
#include "spherecar/scenario.hpp"

namespace {

using spherecar::RunResult;
using spherecar::ScenarioConfig;

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> step;
  bool quiet = false;
};

ScenarioConfig load(const Options& o) {
  std::vector<std::string> warnings;
  ScenarioConfig c = spherecar::loadConfig(o.config, &warnings);
  if (!o.quiet) {
    for (const auto& w : warnings) {
      std::cerr << "warning: " << w << '\n';
    }
  }
  if (o.seed) {
    c.seed = *o.seed;
  }
  if (o.step) {
    if (!(*o.step > 0.0)) {
      throw spherecar::ConfigError("--step: must be positive");
    }
    c.integrator.step = *o.step;
  }
  return c;
}

int finish(const RunResult& r, const ScenarioConfig& c, const Options& o) {
  spherecar::emitOutputs(r, c, o.out);
  const int code = spherecar::exitCode(r.status);
  if (code != 0) {
    std::cerr << "error: " << r.message << '\n';
  } else if (!o.quiet) {
    std::cout << r.summary.dump(2) << '\n';
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Car-like vehicle on a sphere: simulation, tracking and observation"};
  app.require_subcommand(1);
  Options opts;

  auto addCommon = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "Scenario configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory");
    sub->add_option("--seed", opts.seed, "Seed for sampled initial perturbations");
    sub->add_option("--step", opts.step, "Integrator step, overrides the configuration");
    sub->add_flag("--quiet", opts.quiet, "Suppress summaries and warnings");
  };

  auto* simulate = app.add_subcommand("simulate", "Open-loop simulation");
  auto* track = app.add_subcommand("track", "Closed-loop reference tracking");
  auto* observe = app.add_subcommand("observe", "Invariant observer on an open-loop truth");
  auto* feedback =
      app.add_subcommand("output-feedback", "Experimental: tracking from the observer estimate");
  auto* gains = app.add_subcommand("gains", "Observer gains for the configured poles");
  auto* flatness = app.add_subcommand("flatness", "Inputs recovered from the reference curve");
  for (auto* sub : {simulate, track, observe, feedback, gains, flatness}) {
    addCommon(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const ScenarioConfig c = load(opts);
    if (simulate->parsed()) {
      return finish(spherecar::runSimulate(c), c, opts);
    }
    if (track->parsed()) {
      return finish(spherecar::runTracking(c), c, opts);
    }
    if (observe->parsed()) {
      return finish(spherecar::runObserver(c), c, opts);
    }
    if (feedback->parsed()) {
      return finish(spherecar::runOutputFeedback(c), c, opts);
    }
    if (gains->parsed()) {
      const auto report = spherecar::gainsReport(c);
      std::cout << report.dump(2) << '\n';
      return 0;
    }
    if (flatness->parsed()) {
      const auto rows = spherecar::flatnessTable(c);
      std::filesystem::create_directories(opts.out);
      const auto path = std::filesystem::path(opts.out) / c.csvName;
      std::ofstream out(path, std::ios::binary);
      if (!out) {
        throw spherecar::ConfigError("cannot write " + path.string());
      }
      spherecar::writeFlatnessCsv(out, rows);
      if (!opts.quiet) {
        std::cout << "wrote " << rows.size() << " rows to " << path.string() << '\n';
      }
      return 0;
    }
  } catch (const spherecar::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const spherecar::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
