// ubcsim: runs scenarios and compares their results.
//
//   ubcsim run --scenario FILE --out DIR [--seed N] [--mode inprocess|networked]
//              [--manager on|off] [--horizon SECONDS] [--inject-fault MS]
//   ubcsim compare DIR DIR...
//
// Exit status: 0 success, 1 failed expectation or other error, 2 invalid
// scenario or arguments, 3 invariant violation during the run.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ubcsim/error.h"
#include "ubcsim/scenario.h"

#ifndef UBCSIM_DEFAULTS_CONF
#define UBCSIM_DEFAULTS_CONF "config/defaults.conf"
#endif

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitInvariant = 3;

struct RunArgs {
  std::string scenario;
  std::string out;
  std::string defaults = UBCSIM_DEFAULTS_CONF;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string manager;
  std::optional<double> horizon_s;
  std::optional<std::int64_t> fault_ms;
};

int Run(const RunArgs& args) {
  using namespace ubcsim;
  Scenario sc;
  ConfigTree defaults;
  try {
    sc = LoadScenario(args.scenario);
    if (args.seed) sc.sim.seed = *args.seed;
    if (!args.mode.empty()) sc.mode = *ParseRunMode(args.mode);
    if (!args.manager.empty()) sc.manager_enabled = args.manager == "on";
    if (args.horizon_s) {
      if (*args.horizon_s <= 0) {
        throw Error(ErrorCode::kScenario, "horizon must be positive");
      }
      sc.sim.horizon_ms = static_cast<SimTimeMs>(*args.horizon_s * 1000.0);
    }
    if (args.fault_ms) sc.sim.fault_at_ms = *args.fault_ms;
    defaults = LoadLayers(StandardLayerPaths(args.defaults));
  } catch (const Error& e) {
    std::cerr << "ubcsim: " << e.what() << "\n";
    return kExitInvalid;
  }

  RunResult result;
  try {
    result = RunScenario(sc, defaults);
  } catch (const Error& e) {
    std::cerr << "ubcsim: " << e.what() << "\n";
    return e.code() == ErrorCode::kInvariantViolation ? kExitInvariant
                                                      : kExitFailure;
  }
  try {
    WriteArtifacts(args.out, sc, result);
  } catch (const Error& e) {
    std::cerr << "ubcsim: " << e.what() << "\n";
    return kExitFailure;
  }
  WriteSummaryText(std::cout, sc.name, result);
  return 0;
}

int CompareDirs(const std::vector<std::string>& dirs) {
  using namespace ubcsim;
  ComparisonReport report;
  try {
    std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
    report = Compare(paths);
  } catch (const Error& e) {
    std::cerr << "ubcsim: " << e.what() << "\n";
    return kExitInvalid;
  }
  for (const std::string& line : report.orderings) std::cout << line << "\n";
  for (const ExpectationCheck& c : report.checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.run << ": "
              << c.description << "\n";
  }
  return report.all_pass() ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Container resource management simulator"};
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "Run a scenario");
  run->add_option("--scenario", run_args.scenario, "Scenario file")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", run_args.out, "Output directory")->required();
  run->add_option("--seed", run_args.seed, "Random seed override");
  run->add_option("--mode", run_args.mode, "Control transport")
      ->check(CLI::IsMember({"inprocess", "networked"}));
  run->add_option("--manager", run_args.manager, "Enable the manager")
      ->check(CLI::IsMember({"on", "off"}));
  run->add_option("--horizon", run_args.horizon_s, "Horizon in seconds");
  run->add_option("--inject-fault", run_args.fault_ms,
                  "Corrupt memory accounting at this time (ms)");
  run->add_option("--defaults", run_args.defaults,
                  "Packaged configuration defaults");

  std::vector<std::string> dirs;
  CLI::App* compare = app.add_subcommand("compare", "Compare run directories");
  compare->add_option("dirs", dirs, "Run output directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }
  if (*run) return Run(run_args);
  return CompareDirs(dirs);
}
