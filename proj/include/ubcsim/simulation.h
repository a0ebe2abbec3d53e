#ifndef UBCSIM_SIMULATION_H_
#define UBCSIM_SIMULATION_H_

// Discrete-event simulation of hardware nodes hosting containers that run a
// prefork web server, driven by a JMeter-like closed-loop request generator.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "ubcsim/control.h"
#include "ubcsim/kernel.h"
#include "ubcsim/observation.h"
#include "ubcsim/ubc.h"

namespace ubcsim {

// Footprint and timing calibration of the simulated software stack.
struct ModelParams {
  // Container base system, fully touched.
  double init_mib = 1.0;
  double udev_mib = 1.0;
  double syslogd_mib = 1.5;
  double sshd_mib = 2.5;
  // Database and web-server parent.
  double mysql_mib = 22.0;
  double http_parent_mib = 8.0;
  // Worker size before and after its first dynamic page; only the private
  // part (1 - shared_fraction) is charged.
  double worker_fresh_mib = 20.0;
  double worker_warm_mib = 30.0;
  double shared_fraction = 0.79;
  // Fraction of non-base allocations actually touched.
  double touched_fraction = 0.6;
  std::uint64_t kmem_per_process_bytes = 96 * 1024;
  std::uint64_t socket_buffer_bytes = 16 * 1024;
  SimTimeMs error_ms = 40;
  std::uint64_t checkpoint_pages = 1024;
  double transfer_rate_mib_s = 32.0;
  double cpu_share = 0.05;

  std::uint64_t WorkerFreshPages() const;
  std::uint64_t WorkerWarmPages() const;
};

struct NodeSpec {
  std::string id;
  double ram_mib = 2048;
  double swap_mib = 2048;
  double host_mib = 0;  // touched by host processes
};

struct PreforkConfig {
  int start_servers = 4;
  int min_spare = 2;
  int max_spare = 4;
  int max_clients = 128;
  bool keepalive = true;
  double keepalive_timeout_s = 5.0;
};

struct ContainerSpec {
  std::string id;
  std::string host;
  MemoryProfile profile;
  bool web_server = false;
  PreforkConfig prefork;
  std::string replica_group;
};

struct WorkloadSpec {
  std::string target;  // container id
  int threads = 9;
  double ramp_up_s = 2.0;
  int loop_count = 5;
  int requests_per_loop = 8;
  double think_time_mean_ms = 300.0;
  double think_time_stddev_ms = 100.0;
  SimTimeMs base_service_ms = 166;
};

struct SimulationSpec {
  std::vector<NodeSpec> nodes;
  std::vector<ContainerSpec> containers;
  std::vector<WorkloadSpec> workloads;
  ModelParams model;
  SimTimeMs horizon_ms = 300000;
  std::uint64_t seed = 1;
  std::optional<SimTimeMs> fault_at_ms;
};

struct RequestOutcome {
  SimTimeMs issued_at = 0;
  SimTimeMs completed_at = 0;
  bool ok = true;
  std::string container;
  int thread = 0;

  SimTimeMs response_ms() const { return completed_at - issued_at; }
};

struct TraceRecord {
  SimTimeMs time_ms = 0;
  std::string event_kind;
  std::string node;
  std::string container;
  std::string detail;
};

struct UsageRecord {
  SimTimeMs time_ms = 0;
  std::string container;
  std::string node;
  UbcTable ubc;
  int workers = 0;
  int idle_workers = 0;
  int queued = 0;
  std::uint64_t node_resident = 0;
  std::uint64_t node_swap = 0;
};

struct SummaryReport {
  std::size_t requests = 0;
  double avg_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  double stddev_ms = 0.0;  // population
  double err_pct = 0.0;
  double throughput = 0.0;  // requests per second
  std::uint64_t fail_count = 0;
};

// Throughput is completed requests over the span from the first issue to
// the last completion.
SummaryReport Summarize(const std::vector<RequestOutcome>& outcomes,
                        std::uint64_t fail_count);

// Event priorities at equal timestamps; lower runs first.
inline constexpr int kControlPriority = 0;
inline constexpr int kDefaultPriority = 1;

class Simulation {
 public:
  explicit Simulation(SimulationSpec spec);

  SimTimeMs now() const { return now_; }
  const SimulationSpec& spec() const { return spec_; }

  void Schedule(SimTimeMs at, int priority, std::function<void()> fn);
  // Called after every event once invariants have been checked.
  void SetAfterEvent(std::function<void()> hook) {
    after_event_ = std::move(hook);
  }

  // Runs one event; false when none is left before the horizon. Throws
  // kInvariantViolation when memory accounting breaks.
  bool Step();
  void Run();

  // Snapshot of a node and its containers for the monitoring agent.
  LoadObservation Sample(const std::string& node_id);

  // Executes a command on the simulated nodes. |done| runs from a later
  // event at the completion time.
  void Execute(const ActionRequest& request, CommandCallback done);

  const Kernel& kernel() const { return kernel_; }
  const std::vector<RequestOutcome>& outcomes() const { return outcomes_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }
  const std::vector<UsageRecord>& usage() const { return usage_; }
  // Sum of privvmpages and oomguarpages fail counts of web-server
  // containers.
  std::uint64_t FailCount() const;
  bool WorkloadFinished() const;
  SummaryReport Summary() const;

  std::size_t WorkerCount(const std::string& container_id) const;

 private:
  struct Worker {
    Pid pid = 0;
    bool warm = false;
    int bound_thread = -1;
    bool serving = false;
    std::uint64_t keepalive_token = 0;
  };
  struct WebServer {
    std::string container;
    PreforkConfig config;
    Pid parent = 0;
    std::map<Pid, Worker> workers;
    std::deque<int> queue;  // threads waiting for a worker
    SimTimeMs last_spawn = -1000000;
  };
  struct Thread {
    int id = 0;
    std::size_t workload = 0;
    int index = 0;
    std::string container;
    Pid worker = 0;
    int loop = 0;
    int request = 0;
    bool done = false;
    SimTimeMs issued_at = 0;
    std::mt19937_64 rng;
  };
  struct Event {
    SimTimeMs at;
    int priority;
    std::uint64_t seq;
    std::function<void()> fn;
  };
  struct EventOrder {
    bool operator()(const Event& a, const Event& b) const;
  };

  void Trace(const std::string& kind, const std::string& node,
             const std::string& container, const std::string& detail);
  void BootNode(const NodeSpec& node);
  void BootContainer(const ContainerSpec& spec);
  void SpawnWorker(WebServer& ws);
  void HandleKilled(const std::vector<Pid>& killed);
  void Tick();
  void RecordUsage();

  void StartThread(int thread_id);
  void BeginLoop(Thread& t);
  void IssueRequest(int thread_id);
  void Serve(WebServer& ws, Worker& w, int thread_id);
  void Complete(int thread_id, const std::string& container, Pid worker,
                bool ok);
  void Unbind(WebServer& ws, Worker& w);
  void DispatchQueue(WebServer& ws);
  void AfterResponse(Thread& t);
  std::vector<std::string> ReplicaGroup(const std::string& container) const;
  WebServer* FindServer(const std::string& container);
  void SetServing(const std::string& container, int delta);

  void ExecuteMigrate(const ActionRequest& request, CommandCallback done);
  void ExecuteReplicate(const ActionRequest& request, CommandCallback done);
  void Finish(CommandCallback done, CommandResult result, SimTimeMs at);
  SimTimeMs TransferMs(std::uint64_t pages) const;

  SimulationSpec spec_;
  Kernel kernel_;
  SimTimeMs now_ = 0;
  std::uint64_t seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, EventOrder> events_;
  std::function<void()> after_event_;

  std::map<std::string, WebServer> servers_;
  std::map<std::string, ContainerSpec> container_specs_;
  std::vector<Thread> threads_;
  std::vector<RequestOutcome> outcomes_;
  std::vector<TraceRecord> trace_;
  std::vector<UsageRecord> usage_;

  // Busy time of serving workers, per container.
  struct CpuMeter {
    int serving = 0;
    double busy_ms = 0.0;
    SimTimeMs last_change = 0;
  };
  std::map<std::string, CpuMeter> cpu_;
  std::map<std::string, SimTimeMs> last_sample_;
};

}  // namespace ubcsim

#endif  // UBCSIM_SIMULATION_H_
