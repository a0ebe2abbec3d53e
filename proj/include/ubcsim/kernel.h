#ifndef UBCSIM_KERNEL_H_
#define UBCSIM_KERNEL_H_

// Demand-paged memory of simulated hardware nodes: processes allocate
// private virtual pages (charged to privvmpages), back them lazily with RAM,
// spill least-recently-touched pages to swap, and fall back to the OOM
// killer once RAM and swap are exhausted.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ubcsim/observation.h"
#include "ubcsim/ubc.h"

namespace ubcsim {

using Pid = std::uint64_t;

enum class ProcessRole {
  kInit,
  kService,
  kHttpParent,
  kHttpWorker,
  kCheckpoint,
  kOther,
};

std::string_view ProcessRoleName(ProcessRole role);

struct SimProcess {
  Pid pid = 0;
  std::string container_id;  // empty for host processes
  std::string node_id;
  std::uint64_t virtual_pages = 0;
  std::uint64_t touched_pages = 0;
  std::uint64_t resident_pages = 0;
  std::uint64_t kmem_bytes = 0;
  int niceness = 0;
  bool is_root = false;
  bool interacts_with_hardware = false;
  bool is_kernel_thread = false;
  SimTimeMs start_time_ms = 0;
  ProcessRole role = ProcessRole::kOther;
  Pid parent = 0;
  std::uint64_t last_touch = 0;

  std::uint64_t swapped_pages() const { return touched_pages - resident_pages; }
};

struct HardwareNodeState {
  std::string node_id;
  std::uint64_t ram = 0;
  std::uint64_t swap = 0;
  std::uint64_t resident_used = 0;
  std::uint64_t swap_used = 0;
  std::set<std::string> containers;
  bool busy_with_transfer = false;
  double cpu_capacity = 1.0;
  double cpu_used = 0.0;

  std::uint64_t free_ram() const { return ram - resident_used; }
  std::uint64_t free_swap() const { return swap - swap_used; }
};

struct ContainerState {
  std::string container_id;
  std::string host;
  UbcTable ubc;
  std::set<Pid> processes;
  std::string replica_group;
  std::string profile_name;
};

struct SpawnRequest {
  std::string container_id;  // empty: host process on |node_id|
  std::string node_id;
  std::uint64_t virtual_pages = 0;
  std::uint64_t touch_pages = 0;
  std::uint64_t kmem_bytes = 0;
  int niceness = 0;
  bool is_root = false;
  bool interacts_with_hardware = false;
  bool is_kernel_thread = false;
  bool high_priority = false;
  ProcessRole role = ProcessRole::kOther;
  Pid parent = 0;
};

struct SpawnResult {
  std::optional<Pid> pid;  // empty when the privvmpages charge is denied
  std::vector<Pid> killed;  // OOM victims while backing the new pages
};

enum class TouchResult { kResident, kSwappedOthers, kOomTriggered };

struct GrowResult {
  ChargeResult charge = ChargeResult::kGranted;
  std::vector<Pid> killed;
};

// Badness of an OOM candidate: virtual size plus half of its children's,
// scaled up for positive niceness and down for root, hardware access and
// age. Throws kImmuneProcess for init and kernel threads.
double OomBadness(const SimProcess& process, std::uint64_t children_virtual,
                  SimTimeMs now);

class Kernel {
 public:
  void AddNode(const std::string& node_id, std::uint64_t ram_pages,
               std::uint64_t swap_pages);
  void AddContainer(const std::string& container_id, const std::string& host,
                    const MemoryProfile& profile,
                    const std::string& replica_group = "");

  // Container processes charge their virtual pages through privvmpages
  // first; a denial leaves everything unchanged. Initial pages are then
  // touched, invoking the OOM killer as needed.
  SpawnResult Spawn(const SpawnRequest& request, SimTimeMs now);

  // Extends a process by |virtual_delta| charged pages and touches
  // |touch_delta| of them.
  GrowResult Grow(Pid pid, std::uint64_t virtual_delta,
                  std::uint64_t touch_delta, bool high_priority,
                  SimTimeMs now);

  // Backs |pages| more of the process's allocation. Atomic: on
  // kOomTriggered nothing changes. Throws kInvalidArgument when pages
  // exceeds the untouched allocation.
  TouchResult TouchPages(Pid pid, std::uint64_t pages);

  // Touches, killing OOM victims until the pages fit; stops early if the
  // toucher itself is killed.
  std::vector<Pid> TouchWithReclaim(Pid pid, std::uint64_t pages,
                                    SimTimeMs now);

  // Terminates a process and releases all of its resources.
  void Exit(Pid pid);

  // oomguarpages usage (including kmemsize and buffers) minus the barrier.
  std::int64_t ContainerExcess(const std::string& container_id) const;
  // Usage at or below the oomguarpages barrier shields every process.
  bool IsProtected(const std::string& container_id) const;

  // Kills the top-ranked candidate on |node_id|: largest container excess
  // first, then badness, then lowest pid. Increments the victim container's
  // oomguarpages.failcnt. Throws kNoKillableProcess.
  Pid OomKill(const std::string& node_id, SimTimeMs now);
  std::vector<Pid> OomCandidates(const std::string& node_id,
                                 SimTimeMs now) const;

  void HoldUnits(const std::string& container_id, UbcResource resource,
                 std::uint64_t units);
  void ReleaseUnits(const std::string& container_id, UbcResource resource,
                    std::uint64_t units);

  void ApplyProfile(const std::string& container_id,
                    const MemoryProfile& profile);
  void SetReplicaGroup(const std::string& container_id,
                       const std::string& group);
  // The memory profile currently applied to a container.
  MemoryProfile CurrentProfile(const std::string& container_id) const;

  // Free RAM plus free swap.
  std::uint64_t HostFree(const std::string& node_id) const;
  std::uint64_t ChildrenVirtual(Pid pid) const;

  // Moves a container and all of its memory to |target|. Returns false,
  // changing nothing, when the target cannot hold its touched pages.
  bool Rehost(const std::string& container_id, const std::string& target);

  // Throws kInvariantViolation when memory accounting does not balance:
  // per node, container oomguarpages.held plus host-process pages must equal
  // resident plus swap usage; per container, privvmpages, oomguarpages and
  // physpages must equal the sums over its processes.
  void CheckInvariants() const;

  // Test hook: leaks one resident page on |node_id| outside any process.
  void CorruptAccounting(const std::string& node_id);

  const HardwareNodeState& node(const std::string& node_id) const;
  HardwareNodeState& mutable_node(const std::string& node_id);
  const ContainerState& container(const std::string& container_id) const;
  bool HasContainer(const std::string& container_id) const;
  const SimProcess& process(Pid pid) const;
  bool HasProcess(Pid pid) const;
  const std::map<std::string, HardwareNodeState>& nodes() const {
    return nodes_;
  }
  const std::map<std::string, ContainerState>& containers() const {
    return containers_;
  }
  const std::map<Pid, SimProcess>& processes() const { return processes_; }

 private:
  SimProcess& mutable_process(Pid pid);
  ContainerState& mutable_container(const std::string& container_id);
  void Evict(HardwareNodeState& node, Pid toucher, std::uint64_t pages);

  std::map<std::string, HardwareNodeState> nodes_;
  std::map<std::string, ContainerState> containers_;
  std::map<Pid, SimProcess> processes_;
  Pid next_pid_ = 100;
  std::uint64_t touch_seq_ = 0;
};

}  // namespace ubcsim

#endif  // UBCSIM_KERNEL_H_
