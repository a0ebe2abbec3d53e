#include "ubcsim/kernel.h"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "ubcsim/error.h"

namespace ubcsim {

std::string_view ProcessRoleName(ProcessRole role) {
  switch (role) {
    case ProcessRole::kInit: return "init";
    case ProcessRole::kService: return "service";
    case ProcessRole::kHttpParent: return "http_parent";
    case ProcessRole::kHttpWorker: return "http_worker";
    case ProcessRole::kCheckpoint: return "checkpoint";
    case ProcessRole::kOther: return "other";
  }
  return "other";
}

double OomBadness(const SimProcess& process, std::uint64_t children_virtual,
                  SimTimeMs now) {
  if (process.is_kernel_thread || process.role == ProcessRole::kInit) {
    throw Error(ErrorCode::kImmuneProcess,
                "pid " + std::to_string(process.pid) + " is immune");
  }
  double score = static_cast<double>(process.virtual_pages) +
                 0.5 * static_cast<double>(children_virtual);
  if (process.niceness > 0) score *= 1.0 + process.niceness / 20.0;
  if (process.is_root) score /= 4.0;
  if (process.interacts_with_hardware) score /= 4.0;
  const double age_s =
      std::max<double>(0.0, static_cast<double>(now - process.start_time_ms) /
                                1000.0);
  score /= 1.0 + std::log2(1.0 + age_s);
  return score;
}

void Kernel::AddNode(const std::string& node_id, std::uint64_t ram_pages,
                     std::uint64_t swap_pages) {
  if (nodes_.count(node_id) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate node " + node_id);
  }
  HardwareNodeState& n = nodes_[node_id];
  n.node_id = node_id;
  n.ram = ram_pages;
  n.swap = swap_pages;
}

void Kernel::AddContainer(const std::string& container_id,
                          const std::string& host,
                          const MemoryProfile& profile,
                          const std::string& replica_group) {
  if (containers_.count(container_id) != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "duplicate container " + container_id);
  }
  HardwareNodeState& n = mutable_node(host);
  profile.Validate();
  ContainerState& c = containers_[container_id];
  c.container_id = container_id;
  c.host = host;
  c.replica_group = replica_group;
  c.profile_name = profile.name;
  ubcsim::ApplyProfile(c.ubc, profile);
  n.containers.insert(container_id);
}

SpawnResult Kernel::Spawn(const SpawnRequest& request, SimTimeMs now) {
  if (request.touch_pages > request.virtual_pages) {
    throw Error(ErrorCode::kInvalidArgument, "touch exceeds allocation");
  }
  SpawnResult result;
  std::string node_id = request.node_id;
  if (!request.container_id.empty()) {
    ContainerState& c = mutable_container(request.container_id);
    node_id = c.host;
    if (request.virtual_pages > 0 &&
        ChargePrivvm(c.ubc, request.virtual_pages,
                     HostFree(node_id) >= request.virtual_pages,
                     request.high_priority) == ChargeResult::kDenied) {
      return result;
    }
    Hold(c.ubc, UbcResource::kKmemSize, request.kmem_bytes);
  } else {
    mutable_node(node_id);
  }
  SimProcess p;
  p.pid = next_pid_++;
  p.container_id = request.container_id;
  p.node_id = node_id;
  p.virtual_pages = request.virtual_pages;
  p.kmem_bytes = request.container_id.empty() ? 0 : request.kmem_bytes;
  p.niceness = request.niceness;
  p.is_root = request.is_root;
  p.interacts_with_hardware = request.interacts_with_hardware;
  p.is_kernel_thread = request.is_kernel_thread;
  p.start_time_ms = now;
  p.role = request.role;
  p.parent = request.parent;
  const Pid pid = p.pid;
  processes_.emplace(pid, std::move(p));
  if (!request.container_id.empty()) {
    mutable_container(request.container_id).processes.insert(pid);
  }
  result.pid = pid;
  if (request.touch_pages > 0) {
    result.killed = TouchWithReclaim(pid, request.touch_pages, now);
  }
  return result;
}

GrowResult Kernel::Grow(Pid pid, std::uint64_t virtual_delta,
                        std::uint64_t touch_delta, bool high_priority,
                        SimTimeMs now) {
  GrowResult result;
  SimProcess& p = mutable_process(pid);
  if (virtual_delta > 0) {
    if (!p.container_id.empty()) {
      ContainerState& c = mutable_container(p.container_id);
      result.charge = ChargePrivvm(c.ubc, virtual_delta,
                                   HostFree(p.node_id) >= virtual_delta,
                                   high_priority);
      if (result.charge == ChargeResult::kDenied) return result;
    }
    p.virtual_pages += virtual_delta;
  }
  if (touch_delta > 0) result.killed = TouchWithReclaim(pid, touch_delta, now);
  return result;
}

void Kernel::Evict(HardwareNodeState& node, Pid toucher, std::uint64_t pages) {
  std::vector<SimProcess*> order;
  for (auto& [pid, p] : processes_) {
    if (p.node_id == node.node_id && p.resident_pages > 0) order.push_back(&p);
  }
  std::sort(order.begin(), order.end(),
            [toucher](const SimProcess* a, const SimProcess* b) {
              const bool a_self = a->pid == toucher;
              const bool b_self = b->pid == toucher;
              return std::tie(a_self, a->last_touch, a->pid) <
                     std::tie(b_self, b->last_touch, b->pid);
            });
  for (SimProcess* p : order) {
    if (pages == 0) break;
    const std::uint64_t k = std::min(pages, p->resident_pages);
    p->resident_pages -= k;
    node.resident_used -= k;
    node.swap_used += k;
    if (!p->container_id.empty()) {
      Uncharge(mutable_container(p->container_id).ubc, UbcResource::kPhysPages,
               k);
    }
    pages -= k;
  }
}

TouchResult Kernel::TouchPages(Pid pid, std::uint64_t pages) {
  SimProcess& p = mutable_process(pid);
  if (pages > p.virtual_pages - p.touched_pages) {
    throw Error(ErrorCode::kInvalidArgument, "touch exceeds allocation");
  }
  HardwareNodeState& n = mutable_node(p.node_id);
  if (pages > n.free_ram() + n.free_swap()) return TouchResult::kOomTriggered;

  TouchResult result = TouchResult::kResident;
  if (pages > n.free_ram()) {
    result = TouchResult::kSwappedOthers;
    Evict(n, pid, pages - n.free_ram());
  }
  const std::uint64_t resident = std::min(pages, n.free_ram());
  const std::uint64_t swapped = pages - resident;
  p.touched_pages += pages;
  p.resident_pages += resident;
  p.last_touch = ++touch_seq_;
  n.resident_used += resident;
  n.swap_used += swapped;
  if (!p.container_id.empty()) {
    UbcTable& t = mutable_container(p.container_id).ubc;
    Hold(t, UbcResource::kOomGuarPages, pages);
    Hold(t, UbcResource::kPhysPages, resident);
  }
  return result;
}

std::vector<Pid> Kernel::TouchWithReclaim(Pid pid, std::uint64_t pages,
                                          SimTimeMs now) {
  std::vector<Pid> killed;
  const std::string node_id = process(pid).node_id;
  while (TouchPages(pid, pages) == TouchResult::kOomTriggered) {
    const Pid victim = OomKill(node_id, now);
    killed.push_back(victim);
    if (victim == pid) break;
  }
  return killed;
}

void Kernel::Exit(Pid pid) {
  auto it = processes_.find(pid);
  if (it == processes_.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no process " + std::to_string(pid));
  }
  SimProcess& p = it->second;
  HardwareNodeState& n = mutable_node(p.node_id);
  n.resident_used -= p.resident_pages;
  n.swap_used -= p.swapped_pages();
  if (!p.container_id.empty()) {
    ContainerState& c = mutable_container(p.container_id);
    Uncharge(c.ubc, UbcResource::kPrivVmPages, p.virtual_pages);
    Uncharge(c.ubc, UbcResource::kOomGuarPages, p.touched_pages);
    Uncharge(c.ubc, UbcResource::kPhysPages, p.resident_pages);
    Uncharge(c.ubc, UbcResource::kKmemSize, p.kmem_bytes);
    c.processes.erase(pid);
  }
  for (auto& [other_pid, other] : processes_) {
    if (other.parent == pid) other.parent = 0;
  }
  processes_.erase(it);
}

std::int64_t Kernel::ContainerExcess(const std::string& container_id) const {
  const ContainerState& c = container(container_id);
  return static_cast<std::int64_t>(c.ubc.OomUsagePages()) -
         static_cast<std::int64_t>(c.ubc[UbcResource::kOomGuarPages].barrier);
}

bool Kernel::IsProtected(const std::string& container_id) const {
  const ContainerState& c = container(container_id);
  return c.ubc.OomUsagePages() <= c.ubc[UbcResource::kOomGuarPages].barrier;
}

std::vector<Pid> Kernel::OomCandidates(const std::string& node_id,
                                       SimTimeMs now) const {
  struct Ranked {
    std::int64_t excess;
    double badness;
    Pid pid;
  };
  std::vector<Ranked> ranked;
  for (const auto& [pid, p] : processes_) {
    if (p.node_id != node_id || p.container_id.empty()) continue;
    if (p.is_kernel_thread || p.role == ProcessRole::kInit) continue;
    if (IsProtected(p.container_id)) continue;
    ranked.push_back({ContainerExcess(p.container_id),
                      OomBadness(p, ChildrenVirtual(pid), now), pid});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.excess != b.excess) return a.excess > b.excess;
    if (a.badness != b.badness) return a.badness > b.badness;
    return a.pid < b.pid;
  });
  std::vector<Pid> out;
  out.reserve(ranked.size());
  for (const auto& r : ranked) out.push_back(r.pid);
  return out;
}

Pid Kernel::OomKill(const std::string& node_id, SimTimeMs now) {
  const std::vector<Pid> candidates = OomCandidates(node_id, now);
  if (candidates.empty()) {
    throw Error(ErrorCode::kNoKillableProcess,
                "node " + node_id + " is out of memory and every process is "
                "immune or within its guarantee");
  }
  const Pid victim = candidates.front();
  const std::string container_id = process(victim).container_id;
  Exit(victim);
  ++mutable_container(container_id).ubc[UbcResource::kOomGuarPages].failcnt;
  return victim;
}

void Kernel::HoldUnits(const std::string& container_id, UbcResource resource,
                       std::uint64_t units) {
  Hold(mutable_container(container_id).ubc, resource, units);
}

void Kernel::ReleaseUnits(const std::string& container_id,
                          UbcResource resource, std::uint64_t units) {
  Uncharge(mutable_container(container_id).ubc, resource, units);
}

void Kernel::ApplyProfile(const std::string& container_id,
                          const MemoryProfile& profile) {
  profile.Validate();
  ContainerState& c = mutable_container(container_id);
  ubcsim::ApplyProfile(c.ubc, profile);
  c.profile_name = profile.name;
}

void Kernel::SetReplicaGroup(const std::string& container_id,
                             const std::string& group) {
  mutable_container(container_id).replica_group = group;
}

MemoryProfile Kernel::CurrentProfile(const std::string& container_id) const {
  const ContainerState& c = container(container_id);
  MemoryProfile p;
  p.name = c.profile_name;
  p.oomguarpages_barrier = c.ubc[UbcResource::kOomGuarPages].barrier;
  p.vmguarpages_barrier = c.ubc[UbcResource::kVmGuarPages].barrier;
  p.privvmpages_barrier = c.ubc[UbcResource::kPrivVmPages].barrier;
  p.privvmpages_limit = c.ubc[UbcResource::kPrivVmPages].limit;
  return p;
}

std::uint64_t Kernel::HostFree(const std::string& node_id) const {
  const HardwareNodeState& n = node(node_id);
  return n.free_ram() + n.free_swap();
}

std::uint64_t Kernel::ChildrenVirtual(Pid pid) const {
  std::uint64_t total = 0;
  for (const auto& [other_pid, p] : processes_) {
    if (p.parent == pid) total += p.virtual_pages;
  }
  return total;
}

bool Kernel::Rehost(const std::string& container_id,
                    const std::string& target) {
  ContainerState& c = mutable_container(container_id);
  if (c.host == target) return true;
  HardwareNodeState& dst = mutable_node(target);
  HardwareNodeState& src = mutable_node(c.host);
  std::uint64_t touched = 0;
  for (Pid pid : c.processes) touched += process(pid).touched_pages;
  if (touched > dst.free_ram() + dst.free_swap()) return false;

  for (Pid pid : c.processes) {
    SimProcess& p = mutable_process(pid);
    src.resident_used -= p.resident_pages;
    src.swap_used -= p.swapped_pages();
    Uncharge(c.ubc, UbcResource::kPhysPages, p.resident_pages);
    const std::uint64_t resident = std::min(p.touched_pages, dst.free_ram());
    p.resident_pages = resident;
    p.node_id = target;
    dst.resident_used += resident;
    dst.swap_used += p.touched_pages - resident;
    Hold(c.ubc, UbcResource::kPhysPages, resident);
  }
  src.containers.erase(container_id);
  dst.containers.insert(container_id);
  c.host = target;
  return true;
}

void Kernel::CheckInvariants() const {
  std::map<std::string, std::uint64_t> used;
  for (const auto& [pid, p] : processes_) {
    if (p.resident_pages > p.touched_pages ||
        p.touched_pages > p.virtual_pages) {
      throw Error(ErrorCode::kInvariantViolation,
                  "pid " + std::to_string(pid) + " page counts inconsistent");
    }
    if (p.container_id.empty()) used[p.node_id] += p.touched_pages;
  }
  for (const auto& [id, c] : containers_) {
    std::uint64_t virt = 0, touched = 0, resident = 0;
    for (Pid pid : c.processes) {
      const SimProcess& p = process(pid);
      virt += p.virtual_pages;
      touched += p.touched_pages;
      resident += p.resident_pages;
    }
    const UbcTable& t = c.ubc;
    if (t[UbcResource::kPrivVmPages].held != virt) {
      throw Error(ErrorCode::kInvariantViolation,
                  id + ": privvmpages.held " +
                      std::to_string(t[UbcResource::kPrivVmPages].held) +
                      " != process virtual pages " + std::to_string(virt));
    }
    if (t[UbcResource::kOomGuarPages].held != touched ||
        t[UbcResource::kPhysPages].held != resident) {
      throw Error(ErrorCode::kInvariantViolation,
                  id + ": oomguarpages/physpages out of step with processes");
    }
    used[c.host] += t[UbcResource::kOomGuarPages].held;
  }
  for (const auto& [id, n] : nodes_) {
    if (n.resident_used > n.ram || n.swap_used > n.swap) {
      throw Error(ErrorCode::kInvariantViolation, id + ": pool overflow");
    }
    if (used[id] != n.resident_used + n.swap_used) {
      throw Error(ErrorCode::kInvariantViolation,
                  id + ": memory conservation broken (accounted " +
                      std::to_string(used[id]) + " pages, pools hold " +
                      std::to_string(n.resident_used + n.swap_used) + ")");
    }
  }
}

void Kernel::CorruptAccounting(const std::string& node_id) {
  HardwareNodeState& n = mutable_node(node_id);
  if (n.resident_used < n.ram) {
    ++n.resident_used;
  } else {
    --n.resident_used;
  }
}

const HardwareNodeState& Kernel::node(const std::string& node_id) const {
  auto it = nodes_.find(node_id);
  if (it == nodes_.end()) throw Error(ErrorCode::kUnknownNode, node_id);
  return it->second;
}

HardwareNodeState& Kernel::mutable_node(const std::string& node_id) {
  auto it = nodes_.find(node_id);
  if (it == nodes_.end()) throw Error(ErrorCode::kUnknownNode, node_id);
  return it->second;
}

const ContainerState& Kernel::container(const std::string& container_id) const {
  auto it = containers_.find(container_id);
  if (it == containers_.end()) {
    throw Error(ErrorCode::kUnknownContainer, container_id);
  }
  return it->second;
}

ContainerState& Kernel::mutable_container(const std::string& container_id) {
  auto it = containers_.find(container_id);
  if (it == containers_.end()) {
    throw Error(ErrorCode::kUnknownContainer, container_id);
  }
  return it->second;
}

bool Kernel::HasContainer(const std::string& container_id) const {
  return containers_.count(container_id) != 0;
}

const SimProcess& Kernel::process(Pid pid) const {
  auto it = processes_.find(pid);
  if (it == processes_.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no process " + std::to_string(pid));
  }
  return it->second;
}

SimProcess& Kernel::mutable_process(Pid pid) {
  auto it = processes_.find(pid);
  if (it == processes_.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no process " + std::to_string(pid));
  }
  return it->second;
}

bool Kernel::HasProcess(Pid pid) const { return processes_.count(pid) != 0; }

}  // namespace ubcsim
