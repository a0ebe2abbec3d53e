#include "ubcsim/simulation.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "ubcsim/error.h"

namespace ubcsim {
namespace {

std::uint64_t Touched(std::uint64_t pages, double fraction) {
  return std::min<std::uint64_t>(
      pages, static_cast<std::uint64_t>(
                 std::llround(static_cast<double>(pages) * fraction)));
}

}  // namespace

std::uint64_t ModelParams::WorkerFreshPages() const {
  return MibToPages(worker_fresh_mib * (1.0 - shared_fraction));
}

std::uint64_t ModelParams::WorkerWarmPages() const {
  return MibToPages(worker_warm_mib * (1.0 - shared_fraction));
}

SummaryReport Summarize(const std::vector<RequestOutcome>& outcomes,
                        std::uint64_t fail_count) {
  SummaryReport r;
  r.fail_count = fail_count;
  r.requests = outcomes.size();
  if (outcomes.empty()) return r;
  double sum = 0.0;
  std::size_t errors = 0;
  SimTimeMs first_issue = outcomes.front().issued_at;
  SimTimeMs last_done = outcomes.front().completed_at;
  r.min_ms = r.max_ms = static_cast<double>(outcomes.front().response_ms());
  for (const auto& o : outcomes) {
    const double ms = static_cast<double>(o.response_ms());
    sum += ms;
    r.min_ms = std::min(r.min_ms, ms);
    r.max_ms = std::max(r.max_ms, ms);
    if (!o.ok) ++errors;
    first_issue = std::min(first_issue, o.issued_at);
    last_done = std::max(last_done, o.completed_at);
  }
  const double n = static_cast<double>(outcomes.size());
  r.avg_ms = sum / n;
  double sq = 0.0;
  for (const auto& o : outcomes) {
    const double d = static_cast<double>(o.response_ms()) - r.avg_ms;
    sq += d * d;
  }
  r.stddev_ms = std::sqrt(sq / n);
  r.err_pct = 100.0 * static_cast<double>(errors) / n;
  const double span_s = static_cast<double>(last_done - first_issue) / 1000.0;
  r.throughput = span_s > 0.0 ? n / span_s : 0.0;
  return r;
}

bool Simulation::EventOrder::operator()(const Event& a, const Event& b) const {
  return std::tie(a.at, a.priority, a.seq) > std::tie(b.at, b.priority, b.seq);
}

Simulation::Simulation(SimulationSpec spec) : spec_(std::move(spec)) {
  if (spec_.nodes.empty()) {
    throw Error(ErrorCode::kScenario, "no nodes defined");
  }
  for (const NodeSpec& n : spec_.nodes) {
    if (n.ram_mib <= 0 || n.swap_mib < 0 || n.host_mib < 0) {
      throw Error(ErrorCode::kScenario, "node " + n.id + ": bad memory sizes");
    }
    kernel_.AddNode(n.id, MibToPages(n.ram_mib), MibToPages(n.swap_mib));
  }
  for (const ContainerSpec& c : spec_.containers) {
    if (!kernel_.nodes().count(c.host)) {
      throw Error(ErrorCode::kScenario,
                  "container " + c.id + ": unknown host " + c.host);
    }
    try {
      c.profile.Validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::kScenario, "container " + c.id + ": " + e.what());
    }
    if (c.web_server && (c.prefork.min_spare < 0 ||
                         c.prefork.max_spare < c.prefork.min_spare ||
                         c.prefork.max_clients <= 0)) {
      throw Error(ErrorCode::kScenario,
                  "container " + c.id + ": bad prefork settings");
    }
  }
  std::set<std::string> servers;
  for (const ContainerSpec& c : spec_.containers) {
    if (c.web_server) servers.insert(c.id);
  }
  for (const WorkloadSpec& w : spec_.workloads) {
    if (!servers.count(w.target)) {
      throw Error(ErrorCode::kScenario,
                  "workload target " + w.target + " runs no web server");
    }
    if (w.threads <= 0 || w.loop_count <= 0 || w.requests_per_loop <= 0 ||
        w.ramp_up_s < 0 || w.base_service_ms <= 0) {
      throw Error(ErrorCode::kScenario, "workload " + w.target +
                                            ": bad thread group settings");
    }
  }

  for (const NodeSpec& n : spec_.nodes) BootNode(n);
  for (const ContainerSpec& c : spec_.containers) {
    kernel_.AddContainer(c.id, c.host, c.profile, c.replica_group);
    container_specs_[c.id] = c;
    BootContainer(c);
  }

  int next_id = 0;
  for (std::size_t wi = 0; wi < spec_.workloads.size(); ++wi) {
    const WorkloadSpec& w = spec_.workloads[wi];
    for (int i = 0; i < w.threads; ++i) {
      Thread t;
      t.id = next_id++;
      t.workload = wi;
      t.index = i;
      std::seed_seq seq{static_cast<std::uint64_t>(spec_.seed),
                        static_cast<std::uint64_t>(wi),
                        static_cast<std::uint64_t>(i)};
      t.rng.seed(seq);
      threads_.push_back(std::move(t));
      const SimTimeMs start = static_cast<SimTimeMs>(
          std::llround(i * w.ramp_up_s * 1000.0 / w.threads));
      const int id = threads_.back().id;
      Schedule(start, kDefaultPriority, [this, id] { StartThread(id); });
    }
  }
  Schedule(0, kDefaultPriority, [this] { Tick(); });
  if (spec_.fault_at_ms) {
    Schedule(*spec_.fault_at_ms, kDefaultPriority, [this] {
      const std::string& node = spec_.nodes.front().id;
      kernel_.CorruptAccounting(node);
      Trace("fault_injected", node, "", "resident pool corrupted");
    });
  }
}

void Simulation::Schedule(SimTimeMs at, int priority,
                          std::function<void()> fn) {
  events_.push(Event{std::max(at, now_), priority, seq_++, std::move(fn)});
}

bool Simulation::Step() {
  if (events_.empty() || events_.top().at > spec_.horizon_ms) return false;
  Event e = events_.top();
  events_.pop();
  now_ = e.at;
  e.fn();
  kernel_.CheckInvariants();
  if (after_event_) after_event_();
  return true;
}

void Simulation::Run() {
  while (Step()) {
  }
}

void Simulation::Trace(const std::string& kind, const std::string& node,
                       const std::string& container,
                       const std::string& detail) {
  trace_.push_back({now_, kind, node, container, detail});
}

void Simulation::BootNode(const NodeSpec& node) {
  if (node.host_mib <= 0) return;
  SpawnRequest req;
  req.node_id = node.id;
  req.virtual_pages = req.touch_pages = MibToPages(node.host_mib);
  req.is_root = true;
  req.role = ProcessRole::kOther;
  kernel_.Spawn(req, now_);
}

void Simulation::BootContainer(const ContainerSpec& spec) {
  const ModelParams& m = spec_.model;
  auto spawn = [&](ProcessRole role, double mib, double touched, bool root,
                   bool hw, Pid parent) -> std::optional<Pid> {
    SpawnRequest req;
    req.container_id = spec.id;
    req.virtual_pages = MibToPages(mib);
    req.touch_pages = Touched(req.virtual_pages, touched);
    req.kmem_bytes = m.kmem_per_process_bytes;
    req.is_root = root;
    req.interacts_with_hardware = hw;
    req.role = role;
    req.parent = parent;
    SpawnResult r = kernel_.Spawn(req, now_);
    HandleKilled(r.killed);
    if (!r.pid) {
      Trace("spawn_denied", spec.host, spec.id,
            std::string(ProcessRoleName(role)));
    }
    return r.pid;
  };
  const auto init = spawn(ProcessRole::kInit, m.init_mib, 1.0, true, false, 0);
  const Pid init_pid = init.value_or(0);
  spawn(ProcessRole::kOther, m.udev_mib, 1.0, true, true, init_pid);
  spawn(ProcessRole::kOther, m.syslogd_mib, 1.0, true, false, init_pid);
  spawn(ProcessRole::kOther, m.sshd_mib, 1.0, true, false, init_pid);
  spawn(ProcessRole::kService, m.mysql_mib, m.touched_fraction, false, false,
        init_pid);
  Trace("boot", spec.host, spec.id, spec.profile.name);
  if (!spec.web_server) return;

  const auto parent = spawn(ProcessRole::kHttpParent, m.http_parent_mib,
                            m.touched_fraction, true, false, init_pid);
  WebServer& ws = servers_[spec.id];
  ws.container = spec.id;
  ws.config = spec.prefork;
  ws.parent = parent.value_or(0);
  ws.last_spawn = now_;
  for (int i = 0; i < spec.prefork.start_servers; ++i) SpawnWorker(ws);
}

void Simulation::SpawnWorker(WebServer& ws) {
  const ModelParams& m = spec_.model;
  SpawnRequest req;
  req.container_id = ws.container;
  req.virtual_pages = m.WorkerFreshPages();
  req.touch_pages = Touched(req.virtual_pages, m.touched_fraction);
  req.kmem_bytes = m.kmem_per_process_bytes;
  req.role = ProcessRole::kHttpWorker;
  req.parent = ws.parent;
  const std::string host = kernel_.container(ws.container).host;
  SpawnResult r = kernel_.Spawn(req, now_);
  if (!r.pid) {
    Trace("spawn_denied", host, ws.container,
          "privvmpages.failcnt=" +
              std::to_string(kernel_.container(ws.container)
                                 .ubc[UbcResource::kPrivVmPages]
                                 .failcnt));
    return;
  }
  ws.workers[*r.pid] = Worker{*r.pid};
  Trace("spawn", host, ws.container, "pid=" + std::to_string(*r.pid));
  HandleKilled(r.killed);
}

void Simulation::HandleKilled(const std::vector<Pid>& killed) {
  for (Pid pid : killed) {
    for (auto& [id, ws] : servers_) {
      auto it = ws.workers.find(pid);
      if (it == ws.workers.end()) continue;
      Worker& w = it->second;
      if (w.serving) SetServing(id, -1);
      if (w.bound_thread >= 0 && threads_[w.bound_thread].worker == pid) {
        threads_[w.bound_thread].worker = 0;
      }
      ws.workers.erase(it);
    }
    Trace("oom_kill", "", "", "pid=" + std::to_string(pid));
  }
}

void Simulation::Tick() {
  RecordUsage();
  for (auto& [id, ws] : servers_) {
    int idle = 0;
    for (const auto& [pid, w] : ws.workers) {
      if (w.bound_thread < 0) ++idle;
    }
    if (idle < ws.config.min_spare &&
        static_cast<int>(ws.workers.size()) < ws.config.max_clients &&
        now_ - ws.last_spawn >= 1000) {
      ws.last_spawn = now_;
      SpawnWorker(ws);
      DispatchQueue(ws);
    } else if (idle > ws.config.max_spare) {
      Pid victim = 0;
      for (const auto& [pid, w] : ws.workers) {
        if (w.bound_thread < 0) victim = std::max(victim, pid);
      }
      kernel_.Exit(victim);
      ws.workers.erase(victim);
      Trace("kill_worker", kernel_.container(id).host, id,
            "pid=" + std::to_string(victim));
    }
  }
  Schedule(now_ + 1000, kDefaultPriority, [this] { Tick(); });
}

void Simulation::RecordUsage() {
  for (const auto& [id, c] : kernel_.containers()) {
    UsageRecord u;
    u.time_ms = now_;
    u.container = id;
    u.node = c.host;
    u.ubc = c.ubc;
    if (auto it = servers_.find(id); it != servers_.end()) {
      u.workers = static_cast<int>(it->second.workers.size());
      for (const auto& [pid, w] : it->second.workers) {
        if (w.bound_thread < 0) ++u.idle_workers;
      }
      u.queued = static_cast<int>(it->second.queue.size());
    }
    const HardwareNodeState& n = kernel_.node(c.host);
    u.node_resident = n.resident_used;
    u.node_swap = n.swap_used;
    usage_.push_back(std::move(u));
  }
}

std::vector<std::string> Simulation::ReplicaGroup(
    const std::string& container) const {
  const std::string& group = kernel_.container(container).replica_group;
  if (group.empty()) return {container};
  std::vector<std::string> members;
  for (const auto& [id, c] : kernel_.containers()) {
    if (c.replica_group == group && servers_.count(id)) members.push_back(id);
  }
  return members;
}

Simulation::WebServer* Simulation::FindServer(const std::string& container) {
  auto it = servers_.find(container);
  return it == servers_.end() ? nullptr : &it->second;
}

void Simulation::SetServing(const std::string& container, int delta) {
  CpuMeter& m = cpu_[container];
  m.busy_ms += m.serving * static_cast<double>(now_ - m.last_change);
  m.last_change = now_;
  m.serving += delta;
}

void Simulation::StartThread(int thread_id) {
  Thread& t = threads_[thread_id];
  BeginLoop(t);
  IssueRequest(thread_id);
}

void Simulation::BeginLoop(Thread& t) {
  const std::vector<std::string> group =
      ReplicaGroup(spec_.workloads[t.workload].target);
  const std::string& chosen = group[t.index % group.size()];
  if (chosen == t.container) return;
  if (t.worker != 0) {
    if (WebServer* ws = FindServer(t.container)) {
      if (auto it = ws->workers.find(t.worker); it != ws->workers.end()) {
        Unbind(*ws, it->second);
        DispatchQueue(*ws);
      }
    }
    t.worker = 0;
  }
  t.container = chosen;
}

void Simulation::IssueRequest(int thread_id) {
  Thread& t = threads_[thread_id];
  t.issued_at = now_;
  WebServer* ws = FindServer(t.container);
  if (ws == nullptr) {
    Schedule(now_ + spec_.model.error_ms, kDefaultPriority,
             [this, thread_id, c = t.container] {
               Complete(thread_id, c, 0, false);
             });
    return;
  }
  if (t.worker != 0) {
    auto it = ws->workers.find(t.worker);
    if (it != ws->workers.end() && it->second.bound_thread == thread_id) {
      Serve(*ws, it->second, thread_id);
      return;
    }
    t.worker = 0;
  }
  for (auto& [pid, w] : ws->workers) {
    if (w.bound_thread < 0) {
      w.bound_thread = thread_id;
      t.worker = pid;
      kernel_.HoldUnits(ws->container, UbcResource::kTcpSndBuf,
                        spec_.model.socket_buffer_bytes);
      kernel_.HoldUnits(ws->container, UbcResource::kTcpRcvBuf,
                        spec_.model.socket_buffer_bytes);
      Serve(*ws, w, thread_id);
      return;
    }
  }
  int bound = 0;
  for (const auto& [pid, w] : ws->workers) {
    if (w.bound_thread >= 0) ++bound;
  }
  const std::string host = kernel_.container(ws->container).host;
  if (bound + static_cast<int>(ws->queue.size()) >= ws->config.max_clients) {
    Trace("connection_refused", host, ws->container,
          "thread=" + std::to_string(thread_id));
    Schedule(now_ + spec_.model.error_ms, kDefaultPriority,
             [this, thread_id, c = ws->container] {
               Complete(thread_id, c, 0, false);
             });
    return;
  }
  ws->queue.push_back(thread_id);
  Trace("queued", host, ws->container, "thread=" + std::to_string(thread_id));
}

void Simulation::Serve(WebServer& ws, Worker& w, int thread_id) {
  const ModelParams& m = spec_.model;
  const std::string container = ws.container;
  const Pid pid = w.pid;
  w.serving = true;
  ++w.keepalive_token;
  SetServing(container, +1);
  bool ok = true;
  SimTimeMs duration =
      spec_.workloads[threads_[thread_id].workload].base_service_ms;
  if (!w.warm) {
    const std::uint64_t delta = m.WorkerWarmPages() - m.WorkerFreshPages();
    GrowResult g = kernel_.Grow(pid, delta, Touched(delta, m.touched_fraction),
                                false, now_);
    if (g.charge == ChargeResult::kDenied) {
      ok = false;
      duration = m.error_ms;
      Trace("warm_denied", kernel_.container(container).host, container,
            "pid=" + std::to_string(pid));
    } else {
      w.warm = true;
    }
    HandleKilled(g.killed);
  }
  Schedule(now_ + duration, kDefaultPriority,
           [this, thread_id, container, pid, ok] {
             Complete(thread_id, container, pid, ok);
           });
}

void Simulation::Complete(int thread_id, const std::string& container,
                          Pid worker, bool ok) {
  Thread& t = threads_[thread_id];
  WebServer* ws = FindServer(container);
  Worker* w = nullptr;
  if (ws != nullptr && worker != 0) {
    auto it = ws->workers.find(worker);
    if (it != ws->workers.end()) w = &it->second;
  }
  if (worker != 0 && w == nullptr) ok = false;
  if (w != nullptr) {
    w->serving = false;
    SetServing(container, -1);
  }
  outcomes_.push_back({t.issued_at, now_, ok, container, thread_id});
  const std::string host =
      kernel_.HasContainer(container) ? kernel_.container(container).host : "";
  Trace(ok ? "response" : "error_response", host, container,
        "thread=" + std::to_string(thread_id) +
            " ms=" + std::to_string(now_ - t.issued_at));

  if (w != nullptr) {
    if (ws->config.keepalive) {
      const std::uint64_t token = ++w->keepalive_token;
      const auto timeout = static_cast<SimTimeMs>(
          std::llround(ws->config.keepalive_timeout_s * 1000.0));
      Schedule(now_ + timeout, kDefaultPriority,
               [this, container, worker, token, thread_id] {
                 WebServer* s = FindServer(container);
                 if (s == nullptr) return;
                 auto it = s->workers.find(worker);
                 if (it == s->workers.end()) return;
                 Worker& k = it->second;
                 if (k.keepalive_token != token || k.serving ||
                     k.bound_thread != thread_id) {
                   return;
                 }
                 Unbind(*s, k);
                 DispatchQueue(*s);
               });
    } else {
      Unbind(*ws, *w);
      DispatchQueue(*ws);
    }
  }
  AfterResponse(t);
}

void Simulation::Unbind(WebServer& ws, Worker& w) {
  if (w.bound_thread >= 0) {
    Thread& t = threads_[w.bound_thread];
    if (t.worker == w.pid) t.worker = 0;
    kernel_.ReleaseUnits(ws.container, UbcResource::kTcpSndBuf,
                         spec_.model.socket_buffer_bytes);
    kernel_.ReleaseUnits(ws.container, UbcResource::kTcpRcvBuf,
                         spec_.model.socket_buffer_bytes);
  }
  w.bound_thread = -1;
  ++w.keepalive_token;
}

void Simulation::DispatchQueue(WebServer& ws) {
  while (!ws.queue.empty()) {
    Worker* idle = nullptr;
    for (auto& [pid, w] : ws.workers) {
      if (w.bound_thread < 0) {
        idle = &w;
        break;
      }
    }
    if (idle == nullptr) return;
    const int thread_id = ws.queue.front();
    ws.queue.pop_front();
    idle->bound_thread = thread_id;
    threads_[thread_id].worker = idle->pid;
    kernel_.HoldUnits(ws.container, UbcResource::kTcpSndBuf,
                      spec_.model.socket_buffer_bytes);
    kernel_.HoldUnits(ws.container, UbcResource::kTcpRcvBuf,
                      spec_.model.socket_buffer_bytes);
    Serve(ws, *idle, thread_id);
  }
}

void Simulation::AfterResponse(Thread& t) {
  const WorkloadSpec& w = spec_.workloads[t.workload];
  if (++t.request >= w.requests_per_loop) {
    t.request = 0;
    if (++t.loop >= w.loop_count) {
      t.done = true;
      return;
    }
  }
  std::normal_distribution<double> think(w.think_time_mean_ms,
                                         w.think_time_stddev_ms);
  const auto delay =
      static_cast<SimTimeMs>(std::llround(std::max(0.0, think(t.rng))));
  const int id = t.id;
  const bool new_loop = t.request == 0;
  Schedule(now_ + delay, kDefaultPriority, [this, id, new_loop] {
    if (new_loop) BeginLoop(threads_[id]);
    IssueRequest(id);
  });
}

LoadObservation Simulation::Sample(const std::string& node_id) {
  const HardwareNodeState& n = kernel_.node(node_id);
  LoadObservation obs;
  obs.timestamp_ms = now_;
  obs.node_id = node_id;
  obs.resident_used = n.resident_used;
  obs.swap_used = n.swap_used;
  double busy = 0.0;
  for (const std::string& id : n.containers) {
    const ContainerState& c = kernel_.container(id);
    obs.containers.push_back({id, c.ubc, c.replica_group});
    CpuMeter& m = cpu_[id];
    m.busy_ms += m.serving * static_cast<double>(now_ - m.last_change);
    m.last_change = now_;
    busy += m.busy_ms;
    m.busy_ms = 0.0;
  }
  SimTimeMs& last = last_sample_[node_id];
  const SimTimeMs interval = now_ - last;
  obs.cpu_used =
      interval > 0
          ? std::min(1.0, busy * spec_.model.cpu_share /
                              static_cast<double>(interval))
          : 0.0;
  last = now_;
  return obs;
}

void Simulation::Finish(CommandCallback done, CommandResult result,
                        SimTimeMs at) {
  Schedule(at, kDefaultPriority,
           [done = std::move(done), result] { done(result); });
}

SimTimeMs Simulation::TransferMs(std::uint64_t pages) const {
  const double bytes = static_cast<double>(pages * kPageBytes);
  const double rate = spec_.model.transfer_rate_mib_s * 1024.0 * 1024.0;
  return std::max<SimTimeMs>(
      1, static_cast<SimTimeMs>(std::llround(bytes / rate * 1000.0)));
}

void Simulation::Execute(const ActionRequest& request, CommandCallback done) {
  CommandResult fail{request.request_id, false, ""};
  if (!kernel_.HasContainer(request.container_id)) {
    fail.reason = "unknown container " + request.container_id;
    Finish(std::move(done), fail, now_);
    return;
  }
  switch (request.kind) {
    case ActionKind::kAdjustUbc: {
      const std::string host = kernel_.container(request.container_id).host;
      if (!request.source.empty() && request.source != host) {
        fail.reason = "container not on node " + request.source;
      } else if (!request.profile) {
        fail.reason = "missing profile";
      }
      if (!fail.reason.empty()) {
        Finish(std::move(done), fail, now_);
        return;
      }
      kernel_.ApplyProfile(request.container_id, *request.profile);
      Trace("adjust_ubc", host, request.container_id, request.profile->name);
      Finish(std::move(done), {request.request_id, true, ""}, now_);
      return;
    }
    case ActionKind::kMigrate:
      ExecuteMigrate(request, std::move(done));
      return;
    case ActionKind::kReplicate:
      ExecuteReplicate(request, std::move(done));
      return;
  }
}

void Simulation::ExecuteMigrate(const ActionRequest& request,
                                CommandCallback done) {
  CommandResult fail{request.request_id, false, ""};
  const ContainerState& c = kernel_.container(request.container_id);
  const std::string source = c.host;
  const std::string target = request.target;
  if (!request.source.empty() && request.source != source) {
    fail.reason = "container not on node " + request.source;
  } else if (!kernel_.nodes().count(target) || target == source) {
    fail.reason = "bad target node " + target;
  } else if (kernel_.node(source).busy_with_transfer ||
             kernel_.node(target).busy_with_transfer) {
    fail.reason = "node busy";
  }
  if (!fail.reason.empty()) {
    Finish(std::move(done), fail, now_);
    return;
  }

  SpawnRequest ckpt;
  ckpt.container_id = request.container_id;
  ckpt.virtual_pages = spec_.model.checkpoint_pages;
  ckpt.touch_pages = spec_.model.checkpoint_pages;
  ckpt.kmem_bytes = spec_.model.kmem_per_process_bytes;
  ckpt.is_root = true;
  ckpt.role = ProcessRole::kCheckpoint;
  SpawnResult r = kernel_.Spawn(ckpt, now_);
  HandleKilled(r.killed);
  if (!r.pid || !kernel_.HasProcess(*r.pid)) {
    Trace("migrate_failed", source, request.container_id,
          std::string(kInsufficientCheckpointMemory));
    fail.reason = std::string(kInsufficientCheckpointMemory);
    Finish(std::move(done), fail, now_);
    return;
  }
  const Pid ckpt_pid = *r.pid;
  kernel_.mutable_node(source).busy_with_transfer = true;
  kernel_.mutable_node(target).busy_with_transfer = true;
  const SimTimeMs duration =
      TransferMs(c.ubc[UbcResource::kPhysPages].held);
  Trace("migrate_start", source, request.container_id,
        "target=" + target + " ms=" + std::to_string(duration));
  Schedule(now_ + duration, kDefaultPriority,
           [this, request, source, target, ckpt_pid, done = std::move(done)] {
             if (kernel_.HasProcess(ckpt_pid)) kernel_.Exit(ckpt_pid);
             const bool ok = kernel_.Rehost(request.container_id, target);
             kernel_.mutable_node(source).busy_with_transfer = false;
             kernel_.mutable_node(target).busy_with_transfer = false;
             Trace(ok ? "migrate_done" : "migrate_failed", target,
                   request.container_id, ok ? "from=" + source
                                            : "insufficient memory on target");
             done({request.request_id, ok,
                   ok ? "" : "insufficient memory on target"});
           });
}

void Simulation::ExecuteReplicate(const ActionRequest& request,
                                  CommandCallback done) {
  CommandResult fail{request.request_id, false, ""};
  const std::string image =
      request.image_id.empty() ? request.container_id : request.image_id;
  const std::string target = request.target;
  if (!kernel_.HasContainer(image) || !container_specs_.count(image)) {
    fail.reason = "unknown image " + image;
  } else if (!kernel_.nodes().count(target)) {
    fail.reason = "bad target node " + target;
  } else if (kernel_.node(target).busy_with_transfer) {
    fail.reason = "node busy";
  }
  if (!fail.reason.empty()) {
    Finish(std::move(done), fail, now_);
    return;
  }
  std::string group = kernel_.container(image).replica_group;
  if (group.empty()) {
    group = image;
    kernel_.SetReplicaGroup(image, group);
  }
  int n = 1;
  while (kernel_.HasContainer(image + "-r" + std::to_string(n))) ++n;
  const std::string replica = image + "-r" + std::to_string(n);

  const ModelParams& m = spec_.model;
  const std::uint64_t image_pages =
      MibToPages(m.init_mib + m.udev_mib + m.syslogd_mib + m.sshd_mib +
                 m.mysql_mib + m.http_parent_mib);
  const SimTimeMs duration = TransferMs(image_pages);
  kernel_.mutable_node(target).busy_with_transfer = true;
  Trace("replicate_start", target, replica, "image=" + image);
  Schedule(now_ + duration, kDefaultPriority,
           [this, request, image, replica, group, target,
            done = std::move(done)] {
             kernel_.mutable_node(target).busy_with_transfer = false;
             ContainerSpec spec = container_specs_.at(image);
             spec.id = replica;
             spec.host = target;
             spec.profile = kernel_.CurrentProfile(image);
             spec.replica_group = group;
             kernel_.AddContainer(replica, target, spec.profile, group);
             container_specs_[replica] = spec;
             BootContainer(spec);
             Trace("replicate_done", target, replica, "group=" + group);
             done({request.request_id, true, ""});
           });
}

std::uint64_t Simulation::FailCount() const {
  std::uint64_t total = 0;
  for (const auto& [id, ws] : servers_) {
    const UbcTable& t = kernel_.container(id).ubc;
    total += t[UbcResource::kPrivVmPages].failcnt +
             t[UbcResource::kOomGuarPages].failcnt;
  }
  return total;
}

bool Simulation::WorkloadFinished() const {
  return std::all_of(threads_.begin(), threads_.end(),
                     [](const Thread& t) { return t.done; });
}

SummaryReport Simulation::Summary() const {
  return Summarize(outcomes_, FailCount());
}

std::size_t Simulation::WorkerCount(const std::string& container_id) const {
  auto it = servers_.find(container_id);
  return it == servers_.end() ? 0 : it->second.workers.size();
}

}  // namespace ubcsim
