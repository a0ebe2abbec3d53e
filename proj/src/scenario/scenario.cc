#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ubcsim/error.h"
#include "ubcsim/scenario.h"

namespace ubcsim {

namespace {

class SectionReader {
 public:
  SectionReader(std::string path, const ConfigSection& section)
      : path_(std::move(path)), section_(section) {}

  double Number(const std::string& option, double fallback) {
    auto v = Take(option);
    if (!v) return fallback;
    if (v->is_text() || v->is_map()) Bad(option, "expected a number");
    return v->number();
  }
  double RequiredNumber(const std::string& option) {
    auto v = Take(option);
    if (!v) Bad(option, "is required");
    if (v->is_text() || v->is_map()) Bad(option, "expected a number");
    return v->number();
  }
  std::int64_t Integer(const std::string& option, std::int64_t fallback) {
    auto v = Take(option);
    if (!v) return fallback;
    if (!v->is_int()) Bad(option, "expected an integer");
    return v->integer();
  }
  bool Flag(const std::string& option, bool fallback) {
    auto v = Take(option);
    if (!v) return fallback;
    if (v->is_int()) return v->integer() != 0;
    if (v->is_text()) {
      const std::string& t = v->text();
      if (t == "on" || t == "true" || t == "yes") return true;
      if (t == "off" || t == "false" || t == "no") return false;
    }
    Bad(option, "expected on/off");
  }
  std::string Text(const std::string& option, const std::string& fallback) {
    auto v = Take(option);
    if (!v) return fallback;
    if (v->is_map()) Bad(option, "expected text");
    return v->is_text() ? v->text() : v->Format();
  }
  std::string RequiredText(const std::string& option) {
    auto v = Take(option);
    if (!v) Bad(option, "is required");
    if (v->is_map()) Bad(option, "expected text");
    return v->is_text() ? v->text() : v->Format();
  }
  std::optional<ConfigValue> Raw(const std::string& option) {
    return Take(option);
  }

  // Rejects options nobody asked for.
  void Finish() const {
    for (const auto& [option, value] : section_) {
      if (!used_.count(option)) Bad(option, "is not a known option");
    }
  }

 private:
  std::optional<ConfigValue> Take(const std::string& option) {
    used_.insert(option);
    auto it = section_.find(option);
    if (it == section_.end()) return std::nullopt;
    return it->second;
  }
  [[noreturn]] void Bad(const std::string& option,
                        const std::string& what) const {
    throw Error(ErrorCode::kScenario,
                "[" + path_ + "] " + option + " " + what);
  }

  std::string path_;
  const ConfigSection& section_;
  std::set<std::string> used_;
};

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "node/A" -> "A" when |path| lies directly under |kind|.
std::optional<std::string> ChildName(const std::string& path,
                                     std::string_view kind) {
  if (path.size() <= kind.size() + 1 || path.compare(0, kind.size(), kind) ||
      path[kind.size()] != '/') {
    return std::nullopt;
  }
  std::string name = path.substr(kind.size() + 1);
  if (name.find('/') != std::string::npos) return std::nullopt;
  return name;
}

void ReadModel(SectionReader& r, ModelParams& m) {
  m.init_mib = r.Number("init_mib", m.init_mib);
  m.udev_mib = r.Number("udev_mib", m.udev_mib);
  m.syslogd_mib = r.Number("syslogd_mib", m.syslogd_mib);
  m.sshd_mib = r.Number("sshd_mib", m.sshd_mib);
  m.mysql_mib = r.Number("mysql_mib", m.mysql_mib);
  m.http_parent_mib = r.Number("http_parent_mib", m.http_parent_mib);
  m.worker_fresh_mib = r.Number("worker_fresh_mib", m.worker_fresh_mib);
  m.worker_warm_mib = r.Number("worker_warm_mib", m.worker_warm_mib);
  m.shared_fraction = r.Number("shared_fraction", m.shared_fraction);
  m.touched_fraction = r.Number("touched_fraction", m.touched_fraction);
  m.kmem_per_process_bytes = static_cast<std::uint64_t>(
      r.Integer("kmem_per_process_bytes",
                static_cast<std::int64_t>(m.kmem_per_process_bytes)));
  m.socket_buffer_bytes = static_cast<std::uint64_t>(r.Integer(
      "socket_buffer_bytes", static_cast<std::int64_t>(m.socket_buffer_bytes)));
  m.error_ms = r.Integer("error_ms", m.error_ms);
  m.checkpoint_pages = static_cast<std::uint64_t>(r.Integer(
      "checkpoint_pages", static_cast<std::int64_t>(m.checkpoint_pages)));
  m.transfer_rate_mib_s =
      r.Number("transfer_rate_mib_s", m.transfer_rate_mib_s);
  m.cpu_share = r.Number("cpu_share", m.cpu_share);
  if (m.shared_fraction < 0 || m.shared_fraction >= 1 ||
      m.touched_fraction <= 0 || m.touched_fraction > 1 ||
      m.transfer_rate_mib_s <= 0 || m.error_ms <= 0 ||
      m.worker_warm_mib < m.worker_fresh_mib) {
    throw Error(ErrorCode::kScenario, "[model] inconsistent calibration");
  }
}

}  // namespace

std::string_view RunModeName(RunMode mode) {
  return mode == RunMode::kInProcess ? "inprocess" : "networked";
}

std::optional<RunMode> ParseRunMode(std::string_view name) {
  if (name == "inprocess") return RunMode::kInProcess;
  if (name == "networked") return RunMode::kNetworked;
  return std::nullopt;
}

Scenario ParseScenario(std::string_view text, const std::string& source) {
  const ConfigTree tree = ConfigTree::ParseText(text, source);
  Scenario sc;
  sc.source_text = std::string(text);

  for (const auto& [path, section] : tree.sections()) {
    const bool known =
        path.empty() || path == "scenario" || path == "model" ||
        path == "manager" || path == "manager/state" || path == "expect" ||
        ChildName(path, "node") || ChildName(path, "profile") ||
        ChildName(path, "container") || ChildName(path, "workload");
    if (!known) {
      throw Error(ErrorCode::kScenario, "unknown section [" + path + "]");
    }
    if (path.empty() && !section.empty()) {
      throw Error(ErrorCode::kScenario, "options outside any section");
    }
  }

  static const ConfigSection kEmpty;
  auto section = [&](const std::string& path) -> const ConfigSection& {
    const ConfigSection* s = tree.FindSection(path);
    return s ? *s : kEmpty;
  };

  {
    SectionReader r("scenario", section("scenario"));
    sc.name = r.RequiredText("name");
    const double horizon_s = r.Number("horizon", 300);
    if (horizon_s <= 0) {
      throw Error(ErrorCode::kScenario, "[scenario] horizon must be positive");
    }
    sc.sim.horizon_ms = static_cast<SimTimeMs>(horizon_s * 1000.0);
    const std::int64_t seed = r.Integer("seed", 1);
    sc.sim.seed = static_cast<std::uint64_t>(seed);
    const std::string mode = r.Text("mode", "inprocess");
    auto parsed = ParseRunMode(mode);
    if (!parsed) {
      throw Error(ErrorCode::kScenario, "[scenario] unknown mode " + mode);
    }
    sc.mode = *parsed;
    r.Finish();
  }
  {
    SectionReader r("model", section("model"));
    ReadModel(r, sc.sim.model);
    r.Finish();
  }

  for (const auto& [path, s] : tree.sections()) {
    if (auto id = ChildName(path, "node")) {
      SectionReader r(path, s);
      NodeSpec n;
      n.id = *id;
      n.ram_mib = r.RequiredNumber("ram");
      n.swap_mib = r.Number("swap", 0);
      n.host_mib = r.Number("host", 0);
      r.Finish();
      sc.sim.nodes.push_back(n);
    } else if (auto name = ChildName(path, "profile")) {
      SectionReader r(path, s);
      MemoryProfile p = MemoryProfile::FromMib(
          *name, r.RequiredNumber("oomguarpages"),
          r.RequiredNumber("vmguarpages"),
          r.RequiredNumber("privvmpages_barrier"),
          r.RequiredNumber("privvmpages_limit"));
      r.Finish();
      try {
        p.Validate();
      } catch (const Error& e) {
        throw Error(ErrorCode::kScenario, "[" + path + "] " + e.what());
      }
      sc.profiles[*name] = p;
    }
  }
  if (sc.sim.nodes.empty()) {
    throw Error(ErrorCode::kScenario, "scenario defines no nodes");
  }
  std::set<std::string> node_ids;
  for (const NodeSpec& n : sc.sim.nodes) node_ids.insert(n.id);

  for (const auto& [path, s] : tree.sections()) {
    auto id = ChildName(path, "container");
    if (!id) continue;
    SectionReader r(path, s);
    ContainerSpec c;
    c.id = *id;
    c.host = r.RequiredText("host");
    const std::string profile = r.RequiredText("profile");
    c.web_server = r.Flag("web_server", false);
    c.prefork.start_servers =
        static_cast<int>(r.Integer("start_servers", c.prefork.start_servers));
    c.prefork.min_spare =
        static_cast<int>(r.Integer("min_spare", c.prefork.min_spare));
    c.prefork.max_spare =
        static_cast<int>(r.Integer("max_spare", c.prefork.max_spare));
    c.prefork.max_clients =
        static_cast<int>(r.Integer("max_clients", c.prefork.max_clients));
    c.prefork.keepalive = r.Flag("keepalive", c.prefork.keepalive);
    c.prefork.keepalive_timeout_s =
        r.Number("keepalive_timeout", c.prefork.keepalive_timeout_s);
    c.replica_group = r.Text("replica_group", "");
    r.Finish();
    if (!node_ids.count(c.host)) {
      throw Error(ErrorCode::kScenario,
                  "[" + path + "] unknown host " + c.host);
    }
    auto p = sc.profiles.find(profile);
    if (p == sc.profiles.end()) {
      throw Error(ErrorCode::kScenario,
                  "[" + path + "] unknown profile " + profile);
    }
    c.profile = p->second;
    sc.sim.containers.push_back(c);
  }

  for (const auto& [path, s] : tree.sections()) {
    auto id = ChildName(path, "workload");
    if (!id) continue;
    SectionReader r(path, s);
    WorkloadSpec w;
    w.target = r.RequiredText("target");
    w.threads = static_cast<int>(r.Integer("threads", w.threads));
    w.ramp_up_s = r.Number("ramp_up", w.ramp_up_s);
    w.loop_count = static_cast<int>(r.Integer("loop_count", w.loop_count));
    w.requests_per_loop =
        static_cast<int>(r.Integer("requests_per_loop", w.requests_per_loop));
    w.think_time_mean_ms = r.Number("think_mean_ms", w.think_time_mean_ms);
    w.think_time_stddev_ms =
        r.Number("think_stddev_ms", w.think_time_stddev_ms);
    w.base_service_ms = r.Integer("base_service_ms", w.base_service_ms);
    r.Finish();
    auto target = std::find_if(
        sc.sim.containers.begin(), sc.sim.containers.end(),
        [&](const ContainerSpec& c) { return c.id == w.target; });
    if (target == sc.sim.containers.end() || !target->web_server) {
      throw Error(ErrorCode::kScenario,
                  "[" + path + "] target " + w.target + " runs no web server");
    }
    sc.sim.workloads.push_back(w);
  }

  {
    SectionReader r("manager", section("manager"));
    sc.manager_enabled = r.Flag("enabled", true);
    for (const std::string& name : SplitList(r.Text("ladder", ""))) {
      auto p = sc.profiles.find(name);
      if (p == sc.profiles.end()) {
        throw Error(ErrorCode::kScenario,
                    "[manager] ladder names unknown profile " + name);
      }
      sc.ladder.push_back(p->second);
    }
    std::stable_sort(sc.ladder.begin(), sc.ladder.end(),
                     [](const MemoryProfile& a, const MemoryProfile& b) {
                       return a.privvmpages_barrier < b.privvmpages_barrier;
                     });
    if (auto v = r.Raw("check_interval")) {
      sc.config_overlay.Set("server/policy/overload", "check_interval", *v);
    }
    if (auto v = r.Raw("active_policies")) {
      if (!v->is_map()) {
        throw Error(ErrorCode::kScenario,
                    "[manager] active_policies must be a map");
      }
      sc.config_overlay.Set("server/policy/overload", "active_policies", *v);
    }
    if (auto v = r.Raw("frequency")) {
      sc.config_overlay.Set("client", "frequency", *v);
    }
    if (auto v = r.Raw("max_in_memory_observations")) {
      sc.config_overlay.Set("server/data", "max_in_memory_observations", *v);
    }
    const bool replication = r.Flag("replication", false);
    r.Finish();

    for (const auto& [option, value] : section("manager/state")) {
      if (!ParseStateOptionName(option) || !value.is_map()) {
        throw Error(ErrorCode::kScenario,
                    "[manager/state] bad policy state " + option);
      }
      sc.config_overlay.Set(kStateSection, option, value);
    }
    if (replication) {
      const std::string option = "overload-mem-default";
      MapValue state;
      if (auto v = sc.config_overlay.Get(kStateSection, option)) {
        state = v->map();
      } else {
        state = {{"threshold", 0.80}};
      }
      state["replication"] = std::int64_t{1};
      sc.config_overlay.Set(kStateSection, option, state);
    }
  }

  if (const ConfigSection* e = tree.FindSection("expect")) sc.expect = *e;

  try {
    Simulation probe(sc.sim);
  } catch (const Error& e) {
    throw Error(ErrorCode::kScenario, e.what());
  }
  return sc;
}

Scenario LoadScenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kScenario, "cannot read scenario " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseScenario(ss.str(), path.string());
}

}  // namespace ubcsim
