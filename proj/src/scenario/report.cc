#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <queue>
#include <sstream>

#include "ubcsim/error.h"
#include "ubcsim/scenario.h"

namespace ubcsim {

namespace {

constexpr char kSummaryHeader[] =
    "name,requests,avg_ms,min_ms,max_ms,stddev_ms,err_pct,throughput,"
    "fail_count,raised_limits,migrations,replications,first_action";

std::string Fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::size_t CountIssued(const ActionLog& log, ResolverAction action) {
  return log.Issued(std::string(ResolverActionName(action))).size();
}

std::size_t CountUnresolved(const ActionLog& log) {
  const std::string kind(ResolverActionName(ResolverAction::kUnresolved));
  return std::count_if(log.entries().begin(), log.entries().end(),
                       [&](const ActionLogEntry& e) { return e.kind == kind; });
}

std::string FirstAction(const ActionLog& log) {
  for (const auto& e : log.entries()) {
    if (e.outcome == "issued") return e.kind;
  }
  return "";
}

std::ofstream OpenOut(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kMissingArtifacts, "missing " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field += ch;
    }
  }
  out.push_back(field);
  return out;
}

struct LoadedRun {
  std::string name;
  std::map<std::string, std::string> summary;
  ConfigSection expect;

  double Get(const std::string& column) const {
    return std::stod(summary.at(column));
  }
};

LoadedRun LoadRun(const std::filesystem::path& dir) {
  LoadedRun run;
  std::istringstream summary(ReadFile(dir / "summary.csv"));
  std::string header, row;
  if (!std::getline(summary, header) || !std::getline(summary, row)) {
    throw Error(ErrorCode::kMissingArtifacts,
                "empty summary in " + dir.string());
  }
  auto keys = SplitCsvLine(header);
  auto values = SplitCsvLine(row);
  if (keys.size() != values.size()) {
    throw Error(ErrorCode::kMissingArtifacts,
                "malformed summary in " + dir.string());
  }
  for (std::size_t i = 0; i < keys.size(); ++i) run.summary[keys[i]] = values[i];
  run.name = run.summary.at("name");
  ConfigTree scenario =
      ConfigTree::ParseText(ReadFile(dir / "scenario.conf"),
                            (dir / "scenario.conf").string());
  if (const ConfigSection* e = scenario.FindSection("expect")) {
    run.expect = *e;
  }
  return run;
}

std::string Relation(double a, double b) {
  if (a < b) return "<";
  if (a > b) return ">";
  return "==";
}

std::vector<std::string> Names(const ConfigValue& v) {
  std::vector<std::string> out;
  std::stringstream ss(v.is_text() ? v.text() : v.Format());
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void WriteSummaryText(std::ostream& out, const std::string& name,
                      const RunResult& result) {
  const SummaryReport& s = result.summary;
  out << "Run        Requests  Avg(ms)  Min(ms)  Max(ms)  StdDev(ms)  "
         "Err%    Throughput(req/s)  FailCount\n";
  out << std::left << std::setw(11) << name << std::right << std::setw(8)
      << s.requests << std::setw(9) << Fixed(s.avg_ms, 0) << std::setw(9)
      << Fixed(s.min_ms, 0) << std::setw(9) << Fixed(s.max_ms, 0)
      << std::setw(12) << Fixed(s.stddev_ms, 0) << std::setw(8)
      << Fixed(s.err_pct, 2) << std::setw(19) << Fixed(s.throughput, 2)
      << std::setw(11) << s.fail_count << "\n\n";
  out << "Actions: RaisedLimits="
      << CountIssued(result.log, ResolverAction::kRaisedLimits)
      << " MigrationRequested="
      << CountIssued(result.log, ResolverAction::kMigrationRequested)
      << " ReplicationRequested="
      << CountIssued(result.log, ResolverAction::kReplicationRequested)
      << " Unresolved=" << CountUnresolved(result.log) << "\n";
  for (const auto& e : result.log.entries()) {
    out << "  t=" << Fixed(static_cast<double>(e.time_ms) / 1000.0, 1) << "s "
        << e.kind << " " << e.container;
    if (!e.target.empty()) out << " " << e.source << "->" << e.target;
    out << " " << e.outcome << "\n";
  }
}

void WriteRequestsCsv(std::ostream& out,
                      const std::vector<RequestOutcome>& outcomes) {
  std::vector<RequestOutcome> rows = outcomes;
  std::stable_sort(rows.begin(), rows.end(),
                   [](const RequestOutcome& a, const RequestOutcome& b) {
                     return a.completed_at < b.completed_at;
                   });
  SimTimeMs first_issue = 0;
  if (!rows.empty()) {
    first_issue = std::min_element(rows.begin(), rows.end(),
                                   [](const auto& a, const auto& b) {
                                     return a.issued_at < b.issued_at;
                                   })
                      ->issued_at;
  }
  out << "index,issued_ms,completed_ms,response_ms,ok,thread,container,"
         "running_avg_ms,running_median_ms,running_stddev_ms,"
         "running_throughput\n";
  std::priority_queue<double> low;
  std::priority_queue<double, std::vector<double>, std::greater<double>> high;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RequestOutcome& r = rows[i];
    const double x = static_cast<double>(r.response_ms());
    const double n = static_cast<double>(i + 1);
    const double delta = x - mean;
    mean += delta / n;
    m2 += delta * (x - mean);
    if (low.empty() || x <= low.top()) {
      low.push(x);
    } else {
      high.push(x);
    }
    if (low.size() > high.size() + 1) {
      high.push(low.top());
      low.pop();
    } else if (high.size() > low.size()) {
      low.push(high.top());
      high.pop();
    }
    const double median = low.size() > high.size()
                              ? low.top()
                              : (low.top() + high.top()) / 2.0;
    const double span_s =
        static_cast<double>(r.completed_at - first_issue) / 1000.0;
    const double throughput = span_s > 0 ? n / span_s : 0.0;
    out << i << ',' << r.issued_at << ',' << r.completed_at << ','
        << r.response_ms() << ',' << (r.ok ? 1 : 0) << ',' << r.thread << ','
        << CsvField(r.container) << ',' << Fixed(mean, 3) << ','
        << Fixed(median, 3) << ',' << Fixed(std::sqrt(m2 / n), 3) << ','
        << Fixed(throughput, 4) << '\n';
  }
}

void WriteArtifacts(const std::filesystem::path& dir, const Scenario& scenario,
                    const RunResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " +
                                    ec.message());
  }
  {
    auto out = OpenOut(dir / "summary.txt");
    WriteSummaryText(out, scenario.name, result);
  }
  {
    const SummaryReport& s = result.summary;
    auto out = OpenOut(dir / "summary.csv");
    out << kSummaryHeader << '\n'
        << CsvField(scenario.name) << ',' << s.requests << ','
        << Fixed(s.avg_ms, 3) << ',' << Fixed(s.min_ms, 3) << ','
        << Fixed(s.max_ms, 3) << ',' << Fixed(s.stddev_ms, 3) << ','
        << Fixed(s.err_pct, 4) << ',' << Fixed(s.throughput, 6) << ','
        << s.fail_count << ','
        << CountIssued(result.log, ResolverAction::kRaisedLimits) << ','
        << CountIssued(result.log, ResolverAction::kMigrationRequested) << ','
        << CountIssued(result.log, ResolverAction::kReplicationRequested)
        << ',' << FirstAction(result.log) << '\n';
  }
  {
    auto out = OpenOut(dir / "requests.csv");
    WriteRequestsCsv(out, result.outcomes);
  }
  {
    auto out = OpenOut(dir / "trace.csv");
    out << "time_ms,event_kind,node,container,detail\n";
    for (const TraceRecord& t : result.trace) {
      out << t.time_ms << ',' << CsvField(t.event_kind) << ','
          << CsvField(t.node) << ',' << CsvField(t.container) << ','
          << CsvField(t.detail) << '\n';
    }
  }
  {
    auto out = OpenOut(dir / "usage.csv");
    out << "time_ms,container,node,privvmpages_held,privvmpages_barrier,"
           "privvmpages_limit,privvmpages_failcnt,oomguarpages_held,"
           "oomguarpages_barrier,oomguarpages_failcnt,oom_usage_pages,"
           "physpages_held,workers,idle_workers,queued,node_resident_pages,"
           "node_swap_pages\n";
    for (const UsageRecord& u : result.usage) {
      const UbcParam& pv = u.ubc[UbcResource::kPrivVmPages];
      const UbcParam& og = u.ubc[UbcResource::kOomGuarPages];
      out << u.time_ms << ',' << CsvField(u.container) << ','
          << CsvField(u.node) << ',' << pv.held << ',' << pv.barrier << ','
          << pv.limit << ',' << pv.failcnt << ',' << og.held << ','
          << og.barrier << ',' << og.failcnt << ',' << u.ubc.OomUsagePages()
          << ',' << u.ubc[UbcResource::kPhysPages].held << ',' << u.workers
          << ',' << u.idle_workers << ',' << u.queued << ','
          << u.node_resident << ',' << u.node_swap << '\n';
    }
  }
  {
    auto out = OpenOut(dir / "actions.csv");
    result.log.WriteCsv(out);
  }
  {
    auto out = OpenOut(dir / "scenario.conf");
    out << scenario.source_text;
  }
}

bool ComparisonReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const ExpectationCheck& c) { return c.pass; });
}

ComparisonReport Compare(const std::vector<std::filesystem::path>& run_dirs) {
  if (run_dirs.size() < 2) {
    throw Error(ErrorCode::kMissingArtifacts,
                "compare needs at least two run directories");
  }
  std::vector<LoadedRun> runs;
  for (const auto& dir : run_dirs) runs.push_back(LoadRun(dir));

  ComparisonReport report;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t j = i + 1; j < runs.size(); ++j) {
      const LoadedRun& a = runs[i];
      const LoadedRun& b = runs[j];
      for (const char* column : {"throughput", "fail_count", "err_pct",
                                 "max_ms"}) {
        report.orderings.push_back(
            std::string(column) + ": " + a.name + " " +
            Relation(a.Get(column), b.Get(column)) + " " + b.name + " (" +
            a.summary.at(column) + " vs " + b.summary.at(column) + ")");
      }
    }
  }

  auto find = [&](const std::string& name) -> const LoadedRun* {
    for (const LoadedRun& r : runs) {
      if (r.name == name) return &r;
    }
    return nullptr;
  };
  for (const LoadedRun& run : runs) {
    for (const auto& [key, value] : run.expect) {
      auto add = [&](std::string description, bool pass) {
        report.checks.push_back({run.name, std::move(description), pass});
      };
      const std::map<std::string, std::string> exact_columns = {
          {"fail_count", "fail_count"},
          {"err_pct", "err_pct"},
          {"raised_limits", "raised_limits"},
          {"migrations", "migrations"},
          {"replications", "replications"}};
      if (auto it = exact_columns.find(key); it != exact_columns.end()) {
        const double want = value.number();
        const double got = run.Get(it->second);
        add(key + " == " + value.Format() + " (got " +
                run.summary.at(it->second) + ")",
            std::fabs(got - want) < 1e-9);
      } else if (key == "fail_count_min") {
        add("fail_count >= " + value.Format() + " (got " +
                run.summary.at("fail_count") + ")",
            run.Get("fail_count") >= value.number());
      } else if (key == "first_action") {
        add("first action is " + value.text() + " (got " +
                run.summary.at("first_action") + ")",
            run.summary.at("first_action") == value.text());
      } else if (key == "max_ratio_above") {
        const std::string spec = value.is_text() ? value.text() : "";
        const auto colon = spec.find(':');
        if (colon == std::string::npos) {
          add("malformed max_ratio_above " + value.Format(), false);
          continue;
        }
        const LoadedRun* other = find(spec.substr(0, colon));
        if (!other) continue;
        const double factor = std::stod(spec.substr(colon + 1));
        const double ratio = run.Get("max_ms") / other->Get("max_ms");
        add("max_ms / " + other->name + " >= " + spec.substr(colon + 1) +
                " (got " + Fixed(ratio, 2) + ")",
            ratio >= factor);
      } else {
        static const std::map<std::string,
                              std::pair<std::string, std::string>>
            kRelative = {{"throughput_below", {"throughput", "<"}},
                         {"throughput_above", {"throughput", ">"}},
                         {"fail_count_below", {"fail_count", "<"}},
                         {"fail_count_above", {"fail_count", ">"}}};
        auto rel = kRelative.find(key);
        if (rel == kRelative.end()) {
          add("unknown expectation " + key, false);
          continue;
        }
        const auto& [column, op] = rel->second;
        for (const std::string& name : Names(value)) {
          const LoadedRun* other = find(name);
          if (!other) continue;
          const double a = run.Get(column);
          const double b = other->Get(column);
          add(column + " " + op + " " + name + " (" + run.summary.at(column) +
                  " vs " + other->summary.at(column) + ")",
              op == "<" ? a < b : a > b);
        }
      }
    }
  }
  return report;
}

}  // namespace ubcsim
