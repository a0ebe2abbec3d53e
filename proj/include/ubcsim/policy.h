#ifndef UBCSIM_POLICY_H_
#define UBCSIM_POLICY_H_

// Stress detection and resolution plug-ins, keyed by (resource, policy id).

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ubcsim/config.h"
#include "ubcsim/observation.h"
#include "ubcsim/ubc.h"

namespace ubcsim {

// Opaque, atomically replaceable tunables of one plug-in.
using PolicyState = MapValue;

struct ScoreComponent {
  std::string name;
  double raw = 0.0;
  double normalized = 0.0;
};

struct StressScore {
  std::string container_id;
  std::array<ScoreComponent, 4> components;
  double overall = 0.0;
};

// Memory stress of one container from two consecutive observations:
//   1. oomguarpages.failcnt increase      -> 0 or 1
//   2. privvmpages.failcnt increase       -> 0 or 1
//   3. (oomguarpages.held + kmemsize + socket buffers) / oomguarpages.barrier
//   4. privvmpages.held / privvmpages.barrier
// Ratios clamp at 1; overall is the largest normalized component. Byte
// counters are converted to pages individually by ceiling division.
// Throws kBarrierZero for a zero or unlimited denominator.
StressScore MemScore(const ContainerObservation& prev,
                     const ContainerObservation& curr);

enum class Verdict { kNotStressed, kStressed };

// Reads state["threshold"]; throws kMissingThreshold when absent.
double ThresholdOf(const PolicyState& state);

// Stressed iff overall > threshold.
Verdict MemOverloadCheck(const StressScore& score, const PolicyState& state);

// One-step autoregression x[t+1] = a * x[t] fitted by least squares over
// |utilization|; a falls back to 1 when fewer than two samples (or an
// all-zero window) leave it undetermined. Stressed iff the predicted idle
// fraction 1 - a * x[last] is below the threshold.
Verdict CpuOverloadCheck(std::span<const double> utilization,
                         const PolicyState& state);
double PredictNextUtilization(std::span<const double> utilization);

struct NodeView {
  std::string node_id;
  std::uint64_t ram_pages = 0;
  std::uint64_t swap_pages = 0;
  std::uint64_t resident_used = 0;
  bool busy = false;
};

struct ContainerView {
  std::string container_id;
  std::string host;
  std::string replica_group;
  UbcTable ubc;
};

// Immutable snapshot of the cluster handed to resolvers.
struct ClusterView {
  std::vector<NodeView> nodes;
  std::vector<ContainerView> containers;
  // Ascending profile ladder; a limit raise moves one rung up.
  std::vector<MemoryProfile> ladder;

  const NodeView* FindNode(const std::string& id) const;
  const ContainerView* FindContainer(const std::string& id) const;
  // Sum of hosted containers' guarantees.
  std::uint64_t Committed(const std::string& node_id) const;
  // ram + swap - Committed; negative when overcommitted.
  std::int64_t Uncommitted(const std::string& node_id) const;
  // First rung with a larger privvmpages barrier than |table|'s.
  std::optional<MemoryProfile> NextProfile(const UbcTable& table) const;
};

enum class ResolverAction {
  kRaisedLimits,
  kMigrationRequested,
  kReplicationRequested,
  kUnresolved,
};

std::string_view ResolverActionName(ResolverAction action);

struct ResolverOutcome {
  ResolverAction action = ResolverAction::kUnresolved;
  std::string container_id;
  std::string source;
  std::string target;
  std::optional<MemoryProfile> profile;
  std::string detail;

  // The command the outcome asks for; kInvalidArgument for kUnresolved.
  ActionRequest ToRequest() const;
};

inline constexpr double kDefaultReplicationThreshold = 0.75;

// Memory stress resolution for one container: raise its limits in place
// when the host's uncommitted memory covers the next rung, else migrate it
// to the node with the most uncommitted memory that fits the next rung,
// else (with state["replication"] != 0) replicate it once every replica
// group member uses more than state["replication_threshold"] of its
// oomguarpages barrier. A container already on the top rung cannot be
// raised or moved for a raise.
ResolverOutcome MemResolve(const std::string& container_id,
                           const ClusterView& cluster,
                           const PolicyState& state);

// Node stress resolution: migrate the hosted container with the largest
// oomguarpages.held (ties by id) to the first node, by id, that can absorb
// it without its resident usage exceeding |threshold| of its RAM; fall
// through to the next largest container when none can.
ResolverOutcome NodeResolve(const std::string& node_id,
                            const ClusterView& cluster, double threshold);

class OverloadPolicy {
 public:
  virtual ~OverloadPolicy() = default;
  virtual Verdict CheckContainer(std::span<const ContainerObservation> history,
                                 const PolicyState& state) const;
  virtual Verdict CheckNode(const NodeDescriptor& node,
                            std::span<const NodeObservation> history,
                            const PolicyState& state) const;
};

// ("mem", "default"). Nodes are stressed when resident usage exceeds the
// threshold fraction of RAM.
class MemoryOverloadPolicy final : public OverloadPolicy {
 public:
  Verdict CheckContainer(std::span<const ContainerObservation> history,
                         const PolicyState& state) const override;
  Verdict CheckNode(const NodeDescriptor& node,
                    std::span<const NodeObservation> history,
                    const PolicyState& state) const override;
};

// ("cpu", "auto_regressive_order_1"); node-level only.
class CpuAutoRegressivePolicy final : public OverloadPolicy {
 public:
  Verdict CheckNode(const NodeDescriptor& node,
                    std::span<const NodeObservation> history,
                    const PolicyState& state) const override;
};

class OverloadResolver {
 public:
  virtual ~OverloadResolver() = default;
  virtual ResolverOutcome ResolveContainer(const std::string& container_id,
                                           const ClusterView& cluster,
                                           const PolicyState& state) const;
  virtual ResolverOutcome ResolveNode(const std::string& node_id,
                                      const ClusterView& cluster,
                                      const PolicyState& state) const;
};

class MemoryResolver final : public OverloadResolver {
 public:
  ResolverOutcome ResolveContainer(const std::string& container_id,
                                   const ClusterView& cluster,
                                   const PolicyState& state) const override;
  ResolverOutcome ResolveNode(const std::string& node_id,
                              const ClusterView& cluster,
                              const PolicyState& state) const override;
};

// Node rebalancing for non-memory resources. The absorb check uses
// state["absorb_threshold"] (default 0.8) against target RAM.
class RebalanceResolver final : public OverloadResolver {
 public:
  ResolverOutcome ResolveNode(const std::string& node_id,
                              const ClusterView& cluster,
                              const PolicyState& state) const override;
};

class PolicyRepository {
 public:
  void Register(const std::string& resource, const std::string& id,
                std::unique_ptr<OverloadPolicy> policy);
  const OverloadPolicy* Find(const std::string& resource,
                             const std::string& id) const;

  void SetPolicyState(const std::string& resource, const std::string& id,
                      PolicyState state);
  PolicyState GetPolicyState(const std::string& resource,
                             const std::string& id) const;

 private:
  using Key = std::pair<std::string, std::string>;
  std::map<Key, std::unique_ptr<OverloadPolicy>> policies_;
  mutable std::mutex state_mu_;
  std::map<Key, PolicyState> states_;
};

class ResolverRepository {
 public:
  struct Registration {
    std::string resource;
    std::string id;
    int priority = 0;
    std::unique_ptr<OverloadResolver> resolver;
  };

  void Register(const std::string& resource, const std::string& id,
                int priority, std::unique_ptr<OverloadResolver> resolver);

  // Highest priority first; equal priorities keep registration order.
  std::vector<const Registration*> ForResource(
      const std::string& resource) const;

 private:
  std::vector<Registration> registrations_;
};

// Policies and resolvers shipped with the library.
void RegisterDefaultPolicies(PolicyRepository& repo);
void RegisterDefaultResolvers(ResolverRepository& repo);

// Parses "overload-<resource>-<id>" option names.
std::optional<std::pair<std::string, std::string>> ParseStateOptionName(
    const std::string& option);

// Initializes policy states from the [server/policy/state] section and keeps
// them current as that section changes at run time.
class ConfigPolicyStateLoader {
 public:
  ConfigPolicyStateLoader(ConfigManager& config, PolicyRepository& repo);
  ~ConfigPolicyStateLoader();
  ConfigPolicyStateLoader(const ConfigPolicyStateLoader&) = delete;
  ConfigPolicyStateLoader& operator=(const ConfigPolicyStateLoader&) = delete;

 private:
  ConfigManager& config_;
  PolicyRepository& repo_;
  std::uint64_t subscription_;
};

inline constexpr char kStateSection[] = "server/policy/state";

}  // namespace ubcsim

#endif  // UBCSIM_POLICY_H_
