#ifndef UBCSIM_CONTROL_H_
#define UBCSIM_CONTROL_H_

// Server-side control loop: the observation hierarchy, periodic stress
// checks, and the transfer queue that serializes migrations/replications.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ubcsim/config.h"
#include "ubcsim/observation.h"
#include "ubcsim/policy.h"

namespace ubcsim {

class ContainerEntry {
 public:
  const std::string& id() const { return id_; }
  // Empty while the container is between hosts.
  const std::string& node_id() const { return node_id_; }
  const std::string& replica_group() const { return replica_group_; }
  std::span<const ContainerObservation> history() const { return history_; }
  const ContainerObservation* latest() const {
    return history_.empty() ? nullptr : &history_.back();
  }
  std::optional<SimTimeMs> last_action_ms() const { return last_action_ms_; }

 private:
  friend class NodeHierarchy;
  std::string id_;
  std::string node_id_;
  std::string replica_group_;
  std::vector<ContainerObservation> history_;
  std::optional<SimTimeMs> last_action_ms_;
};

class NodeEntry {
 public:
  const NodeDescriptor& descriptor() const { return descriptor_; }
  const std::string& id() const { return descriptor_.node_id; }
  std::span<const NodeObservation> history() const { return history_; }
  const NodeObservation* latest() const {
    return history_.empty() ? nullptr : &history_.back();
  }
  const std::set<std::string>& container_ids() const { return containers_; }

 private:
  friend class NodeHierarchy;
  NodeDescriptor descriptor_;
  std::vector<NodeObservation> history_;
  std::set<std::string> containers_;
};

// Depth-first traversal callbacks: data centre, then each node (by id),
// then that node's containers (by id).
class HierarchyVisitor {
 public:
  virtual ~HierarchyVisitor() = default;
  virtual void EnterDataCentre(const std::string& /*id*/) {}
  virtual void LeaveDataCentre(const std::string& /*id*/) {}
  virtual void EnterNode(const NodeEntry& /*node*/) {}
  virtual void LeaveNode(const NodeEntry& /*node*/) {}
  virtual void EnterContainer(const ContainerEntry& /*container*/) {}
  virtual void LeaveContainer(const ContainerEntry& /*container*/) {}
};

class NodeHierarchy {
 public:
  explicit NodeHierarchy(std::string datacentre_id = "datacentre",
                         std::size_t capacity = 20);

  const std::string& datacentre_id() const { return datacentre_id_; }
  std::size_t capacity() const { return capacity_; }
  // Shrinking trims every ring immediately.
  void SetCapacity(std::size_t capacity);

  // Re-registering a node replaces its descriptor and keeps its data.
  void RegisterNode(const NodeDescriptor& node);
  bool HasNode(const std::string& node_id) const;

  // Appends |obs| to the node's ring and to each listed container's ring.
  // The node's report is authoritative for placement: a listed container
  // known on another node moves here; a container the node no longer lists
  // is detached until it shows up again. Container samples not newer than
  // that container's latest observation are dropped. Throws kUnknownNode.
  void RecordObservation(const LoadObservation& obs);

  void MarkAction(const std::string& container_id, SimTimeMs when);

  const NodeEntry* FindNode(const std::string& node_id) const;
  const ContainerEntry* FindContainer(const std::string& container_id) const;

  void Visit(HierarchyVisitor& visitor) const;

  // Latest observed state of every placed container and every node.
  ClusterView BuildClusterView(std::vector<MemoryProfile> ladder,
                               const std::set<std::string>& busy_nodes) const;

 private:
  template <typename T>
  void Append(std::vector<T>& ring, T value);

  std::string datacentre_id_;
  std::size_t capacity_;
  std::map<std::string, NodeEntry> nodes_;
  std::map<std::string, ContainerEntry> containers_;
};

using CommandCallback = std::function<void(const CommandResult&)>;

// Delivers a command to whichever node must execute it. |done| is invoked
// exactly once, possibly before Dispatch returns.
class CommandDispatcher {
 public:
  virtual ~CommandDispatcher() = default;
  virtual void Dispatch(const ActionRequest& request, CommandCallback done) = 0;
};

class TransferObserver {
 public:
  virtual ~TransferObserver() = default;
  virtual void OnStarted(const ActionRequest& /*request*/) {}
  virtual void OnSucceeded(const ActionRequest& /*request*/) {}
  virtual void OnFailed(const ActionRequest& /*request*/,
                        const std::string& /*reason*/) {}
};

// FIFO queue of Migrate/Replicate requests. One transfer runs at a time and
// later requests never overtake the head, so no node is ever part of two
// concurrent transfers.
class Actlater {
 public:
  explicit Actlater(CommandDispatcher& dispatcher);

  // Throws kInvalidArgument for AdjustUbc.
  void Submit(ActionRequest request);
  // Starts the head request when nothing is in flight.
  void Pump();

  void AddObserver(TransferObserver* observer);
  void RemoveObserver(TransferObserver* observer);

  const std::optional<ActionRequest>& in_flight() const { return in_flight_; }
  std::size_t queued() const { return queue_.size(); }
  // Nodes of the in-flight transfer.
  std::set<std::string> BusyNodes() const;
  // Containers with a queued or in-flight transfer.
  std::set<std::string> PendingContainers() const;

 private:
  void Complete(std::uint64_t request_id, const CommandResult& result);

  CommandDispatcher& dispatcher_;
  std::deque<ActionRequest> queue_;
  std::optional<ActionRequest> in_flight_;
  std::vector<TransferObserver*> observers_;
  bool pumping_ = false;
};

// Quotes a CSV field when it holds a comma, quote or line break.
std::string CsvField(std::string_view field);

struct ActionLogEntry {
  SimTimeMs time_ms = 0;
  std::string kind;
  std::string container;
  std::string source;
  std::string target;
  std::string outcome;

  bool operator==(const ActionLogEntry&) const = default;
};

class ActionLog {
 public:
  void Append(ActionLogEntry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<ActionLogEntry>& entries() const { return entries_; }
  // Entries of |kind| whose outcome is "issued".
  std::vector<ActionLogEntry> Issued(const std::string& kind) const;
  void WriteCsv(std::ostream& out) const;

 private:
  std::vector<ActionLogEntry> entries_;
};

struct StressDecision {
  std::string resource;
  std::string entity;  // container or node id
  bool node_level = false;
  std::string resolver_id;
  ResolverOutcome outcome;
};

struct StressCheckInput {
  const NodeHierarchy* hierarchy = nullptr;
  const PolicyRepository* policies = nullptr;
  const ResolverRepository* resolvers = nullptr;
  MapValue active_policies;  // resource -> policy id
  std::vector<MemoryProfile> ladder;
  std::set<std::string> busy_nodes;
  std::set<std::string> pending_containers;
};

// One stress check over a snapshot, without side effects. For every active
// (resource, policy) pair, each node is checked and then each of its
// containers; a stressed entity is offered to the resource's resolvers in
// priority order until one does not return Unresolved. Containers whose
// latest observation predates their last action, or that wait on a
// transfer, are skipped. Later decisions see the effects of earlier ones
// in the same check.
std::vector<StressDecision> EvaluateStress(const StressCheckInput& input);

inline constexpr char kOverloadSection[] = "server/policy/overload";
inline constexpr char kDataSection[] = "server/data";

// Periodic stress checking. Tunables come from the configuration manager
// and follow its run-time changes: check_interval reschedules the next
// check, max_in_memory_observations resizes the hierarchy's rings.
class Monitor : public TransferObserver {
 public:
  Monitor(ConfigManager& config, NodeHierarchy& hierarchy,
          const PolicyRepository& policies,
          const ResolverRepository& resolvers, Actlater& actlater,
          CommandDispatcher& dispatcher, std::vector<MemoryProfile> ladder,
          ActionLog& log);
  ~Monitor() override;
  Monitor(const Monitor&) = delete;
  Monitor& operator=(const Monitor&) = delete;

  SimTimeMs check_period_ms() const { return period_ms_; }
  SimTimeMs next_check_ms() const { return last_check_ms_ + period_ms_; }
  const std::vector<SimTimeMs>& check_times() const { return check_times_; }

  // Runs the check when one is due at |now|.
  std::vector<ActionRequest> RunDueCheck(SimTimeMs now);
  // Runs a check unconditionally and submits the resulting actions.
  std::vector<ActionRequest> RunStressCheck(SimTimeMs now);

  // The monitor's clock for log entries produced by notifications.
  void SetClock(std::function<SimTimeMs()> clock) { clock_ = std::move(clock); }

  void OnStarted(const ActionRequest& request) override;
  void OnSucceeded(const ActionRequest& request) override;
  void OnFailed(const ActionRequest& request,
                const std::string& reason) override;

 private:
  void Adjust(const ActionRequest& request);
  SimTimeMs Now() const { return clock_ ? clock_() : last_check_ms_; }

  ConfigManager& config_;
  NodeHierarchy& hierarchy_;
  const PolicyRepository& policies_;
  const ResolverRepository& resolvers_;
  Actlater& actlater_;
  CommandDispatcher& dispatcher_;
  std::vector<MemoryProfile> ladder_;
  ActionLog& log_;
  std::function<SimTimeMs()> clock_;

  SimTimeMs period_ms_ = 12000;
  SimTimeMs last_check_ms_ = 0;
  std::vector<SimTimeMs> check_times_;
  std::uint64_t next_request_id_ = 1;
  std::uint64_t overload_subscription_ = 0;
  std::uint64_t data_subscription_ = 0;
};

}  // namespace ubcsim

#endif  // UBCSIM_CONTROL_H_
