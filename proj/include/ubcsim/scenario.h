#ifndef UBCSIM_SCENARIO_H_
#define UBCSIM_SCENARIO_H_

// Scenario files, the run harness that wires the simulation to the control
// loop, report artifacts and cross-run comparison.
//
// A scenario is an INI file in configuration syntax:
//   [scenario]       name, horizon (s), seed, mode
//   [node/<id>]      ram, swap, host (MiB)
//   [profile/<name>] oomguarpages, vmguarpages, privvmpages_barrier,
//                    privvmpages_limit (MiB)
//   [container/<id>] host, profile, web_server, prefork settings,
//                    replica_group
//   [workload/<id>]  target, threads, ramp_up (s), loop_count,
//                    requests_per_loop, think_mean_ms, think_stddev_ms,
//                    base_service_ms
//   [model]          calibration overrides
//   [manager]        enabled, ladder, check_interval, frequency,
//                    active_policies, replication
//   [manager/state]  policy states, as in [server/policy/state]
//   [expect]         declared outcomes checked by Compare

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ubcsim/config.h"
#include "ubcsim/control.h"
#include "ubcsim/simulation.h"

namespace ubcsim {

enum class RunMode { kInProcess, kNetworked };

std::string_view RunModeName(RunMode mode);
std::optional<RunMode> ParseRunMode(std::string_view name);

struct Scenario {
  std::string name;
  SimulationSpec sim;
  std::map<std::string, MemoryProfile> profiles;
  std::vector<MemoryProfile> ladder;  // ascending privvmpages barrier
  bool manager_enabled = true;
  // Applied over the packaged defaults.
  ConfigTree config_overlay;
  RunMode mode = RunMode::kInProcess;
  ConfigSection expect;
  std::string source_text;
};

// Throws kScenario on invalid content and kParse on bad syntax.
Scenario ParseScenario(std::string_view text,
                       const std::string& source = "<scenario>");
Scenario LoadScenario(const std::filesystem::path& path);

struct RunResult {
  std::string name;
  SummaryReport summary;
  ActionLog log;
  std::vector<RequestOutcome> outcomes;
  std::vector<TraceRecord> trace;
  std::vector<UsageRecord> usage;
  std::vector<SimTimeMs> check_times;
  std::uint64_t reports = 0;  // load observations that reached the server
  SimTimeMs end_ms = 0;
};

// Runs to the horizon or until the workload and every transfer have
// finished. Deterministic for a fixed scenario and defaults. Throws
// kInvariantViolation when memory accounting breaks.
RunResult RunScenario(const Scenario& scenario, const ConfigTree& defaults);

// Writes summary.txt, summary.csv, requests.csv, trace.csv, usage.csv,
// actions.csv and scenario.conf into |dir|.
void WriteArtifacts(const std::filesystem::path& dir, const Scenario& scenario,
                    const RunResult& result);

void WriteSummaryText(std::ostream& out, const std::string& name,
                      const RunResult& result);
// Per-request rows with running average, median, population standard
// deviation and throughput.
void WriteRequestsCsv(std::ostream& out,
                      const std::vector<RequestOutcome>& outcomes);

struct ExpectationCheck {
  std::string run;
  std::string description;
  bool pass = false;
};

struct ComparisonReport {
  std::vector<std::string> orderings;
  std::vector<ExpectationCheck> checks;

  bool all_pass() const;
};

// Loads run directories written by WriteArtifacts and evaluates pairwise
// orderings plus the [expect] declarations of each run. Throws
// kMissingArtifacts when fewer than two runs are given or a file is absent.
ComparisonReport Compare(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace ubcsim

#endif  // UBCSIM_SCENARIO_H_
