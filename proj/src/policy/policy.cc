#include "ubcsim/policy.h"

#include <algorithm>

#include "ubcsim/error.h"

namespace ubcsim {
namespace {

double Ratio(std::uint64_t numerator, std::uint64_t denominator,
             std::string_view what) {
  if (denominator == 0 || denominator == kUnlimited) {
    throw Error(ErrorCode::kBarrierZero,
                std::string(what) + " barrier is zero or unlimited");
  }
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

double FailDelta(const UbcParam& prev, const UbcParam& curr) {
  return curr.failcnt >= prev.failcnt
             ? static_cast<double>(curr.failcnt - prev.failcnt)
             : 0.0;
}

double Numeric(const PolicyState& state, const std::string& key,
               double fallback) {
  auto it = state.find(key);
  return it == state.end() ? fallback : ScalarNumber(it->second);
}

}  // namespace

StressScore MemScore(const ContainerObservation& prev,
                     const ContainerObservation& curr) {
  if (prev.container_id != curr.container_id) {
    throw Error(ErrorCode::kInvalidArgument,
                "observations of different containers");
  }
  const UbcTable& p = prev.ubc;
  const UbcTable& c = curr.ubc;
  StressScore score;
  score.container_id = curr.container_id;

  auto& oom_fail = score.components[0];
  oom_fail.name = "oomguarpages.failcnt";
  oom_fail.raw = FailDelta(p[UbcResource::kOomGuarPages],
                           c[UbcResource::kOomGuarPages]);
  oom_fail.normalized = oom_fail.raw == 0.0 ? 0.0 : 1.0;

  auto& privvm_fail = score.components[1];
  privvm_fail.name = "privvmpages.failcnt";
  privvm_fail.raw = FailDelta(p[UbcResource::kPrivVmPages],
                              c[UbcResource::kPrivVmPages]);
  privvm_fail.normalized = privvm_fail.raw == 0.0 ? 0.0 : 1.0;

  auto& usage = score.components[2];
  usage.name = "memory usage / oomguarpages.barrier";
  usage.raw = Ratio(c.OomUsagePages(), c[UbcResource::kOomGuarPages].barrier,
                    "oomguarpages");
  usage.normalized = std::min(1.0, usage.raw);

  auto& privvm = score.components[3];
  privvm.name = "privvmpages.held / privvmpages.barrier";
  privvm.raw = Ratio(c[UbcResource::kPrivVmPages].held,
                     c[UbcResource::kPrivVmPages].barrier, "privvmpages");
  privvm.normalized = std::min(1.0, privvm.raw);

  score.overall = 0.0;
  for (const auto& component : score.components) {
    score.overall = std::max(score.overall, component.normalized);
  }
  return score;
}

double ThresholdOf(const PolicyState& state) {
  auto it = state.find("threshold");
  if (it == state.end()) {
    throw Error(ErrorCode::kMissingThreshold, "policy state has no threshold");
  }
  return ScalarNumber(it->second);
}

Verdict MemOverloadCheck(const StressScore& score, const PolicyState& state) {
  return score.overall > ThresholdOf(state) ? Verdict::kStressed
                                            : Verdict::kNotStressed;
}

double PredictNextUtilization(std::span<const double> utilization) {
  if (utilization.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty utilization window");
  }
  double cross = 0.0;
  double square = 0.0;
  for (std::size_t t = 0; t + 1 < utilization.size(); ++t) {
    cross += utilization[t] * utilization[t + 1];
    square += utilization[t] * utilization[t];
  }
  const double a = square > 0.0 ? cross / square : 1.0;
  return a * utilization.back();
}

Verdict CpuOverloadCheck(std::span<const double> utilization,
                         const PolicyState& state) {
  const double threshold = ThresholdOf(state);
  const double idle = 1.0 - PredictNextUtilization(utilization);
  return idle < threshold ? Verdict::kStressed : Verdict::kNotStressed;
}

const NodeView* ClusterView::FindNode(const std::string& id) const {
  for (const auto& n : nodes) {
    if (n.node_id == id) return &n;
  }
  return nullptr;
}

const ContainerView* ClusterView::FindContainer(const std::string& id) const {
  for (const auto& c : containers) {
    if (c.container_id == id) return &c;
  }
  return nullptr;
}

std::uint64_t ClusterView::Committed(const std::string& node_id) const {
  std::uint64_t total = 0;
  for (const auto& c : containers) {
    if (c.host == node_id) total += c.ubc.Guarantee();
  }
  return total;
}

std::int64_t ClusterView::Uncommitted(const std::string& node_id) const {
  const NodeView* node = FindNode(node_id);
  if (node == nullptr) return 0;
  return static_cast<std::int64_t>(node->ram_pages + node->swap_pages) -
         static_cast<std::int64_t>(Committed(node_id));
}

std::optional<MemoryProfile> ClusterView::NextProfile(
    const UbcTable& table) const {
  const std::uint64_t current = table[UbcResource::kPrivVmPages].barrier;
  for (const auto& rung : ladder) {
    if (rung.privvmpages_barrier > current) return rung;
  }
  return std::nullopt;
}

std::string_view ResolverActionName(ResolverAction action) {
  switch (action) {
    case ResolverAction::kRaisedLimits: return "RaisedLimits";
    case ResolverAction::kMigrationRequested: return "MigrationRequested";
    case ResolverAction::kReplicationRequested: return "ReplicationRequested";
    case ResolverAction::kUnresolved: return "Unresolved";
  }
  return "Unknown";
}

ActionRequest ResolverOutcome::ToRequest() const {
  ActionRequest req;
  req.container_id = container_id;
  req.source = source;
  req.target = target;
  req.profile = profile;
  switch (action) {
    case ResolverAction::kRaisedLimits:
      req.kind = ActionKind::kAdjustUbc;
      req.target.clear();
      break;
    case ResolverAction::kMigrationRequested:
      req.kind = ActionKind::kMigrate;
      break;
    case ResolverAction::kReplicationRequested:
      req.kind = ActionKind::kReplicate;
      req.image_id = container_id;
      break;
    case ResolverAction::kUnresolved:
      throw Error(ErrorCode::kInvalidArgument, "unresolved outcome");
  }
  return req;
}

ResolverOutcome MemResolve(const std::string& container_id,
                           const ClusterView& cluster,
                           const PolicyState& state) {
  ResolverOutcome out;
  out.container_id = container_id;
  const ContainerView* container = cluster.FindContainer(container_id);
  if (container == nullptr) {
    out.detail = "unknown container";
    return out;
  }
  out.source = container->host;

  if (auto next = cluster.NextProfile(container->ubc)) {
    const std::uint64_t current = container->ubc.Guarantee();
    const std::uint64_t wanted = next->Guarantee();
    const std::int64_t growth =
        wanted > current ? static_cast<std::int64_t>(wanted - current) : 0;
    if (cluster.Uncommitted(container->host) >= growth) {
      out.action = ResolverAction::kRaisedLimits;
      out.profile = *next;
      out.detail = "raised to " + next->name;
      return out;
    }
    const NodeView* best = nullptr;
    for (const auto& node : cluster.nodes) {
      if (node.node_id == container->host || node.busy) continue;
      if (cluster.Uncommitted(node.node_id) <
          static_cast<std::int64_t>(wanted)) {
        continue;
      }
      if (best == nullptr || cluster.Uncommitted(node.node_id) >
                                 cluster.Uncommitted(best->node_id)) {
        best = &node;
      }
    }
    if (best != nullptr) {
      out.action = ResolverAction::kMigrationRequested;
      out.target = best->node_id;
      out.profile = *next;
      out.detail = "migrate then raise to " + next->name;
      return out;
    }
  }

  if (Numeric(state, "replication", 0.0) != 0.0) {
    const double level = Numeric(state, "replication_threshold",
                                 kDefaultReplicationThreshold);
    std::vector<const ContainerView*> group;
    for (const auto& c : cluster.containers) {
      const bool member =
          c.container_id == container_id ||
          (!container->replica_group.empty() &&
           c.replica_group == container->replica_group);
      if (member) group.push_back(&c);
    }
    const bool all_busy =
        std::all_of(group.begin(), group.end(), [&](const ContainerView* c) {
          const auto barrier = c->ubc[UbcResource::kOomGuarPages].barrier;
          if (barrier == 0 || barrier == kUnlimited) return false;
          return static_cast<double>(c->ubc.OomUsagePages()) /
                     static_cast<double>(barrier) >
                 level;
        });
    if (all_busy) {
      const NodeView* best = nullptr;
      for (const auto& node : cluster.nodes) {
        if (node.busy) continue;
        bool hosts_member = std::any_of(
            group.begin(), group.end(),
            [&](const ContainerView* c) { return c->host == node.node_id; });
        if (hosts_member) continue;
        if (cluster.Uncommitted(node.node_id) <
            static_cast<std::int64_t>(container->ubc.Guarantee())) {
          continue;
        }
        if (best == nullptr || cluster.Uncommitted(node.node_id) >
                                   cluster.Uncommitted(best->node_id)) {
          best = &node;
        }
      }
      if (best != nullptr) {
        out.action = ResolverAction::kReplicationRequested;
        out.target = best->node_id;
        out.detail = "replicate to " + best->node_id;
        return out;
      }
    }
  }

  out.detail = cluster.NextProfile(container->ubc)
                   ? "no headroom for a limit raise"
                   : "already at the largest profile";
  return out;
}

ResolverOutcome NodeResolve(const std::string& node_id,
                            const ClusterView& cluster, double threshold) {
  ResolverOutcome out;
  out.source = node_id;
  std::vector<const ContainerView*> hosted;
  for (const auto& c : cluster.containers) {
    if (c.host == node_id) hosted.push_back(&c);
  }
  std::sort(hosted.begin(), hosted.end(),
            [](const ContainerView* a, const ContainerView* b) {
              const auto ua = a->ubc[UbcResource::kOomGuarPages].held;
              const auto ub = b->ubc[UbcResource::kOomGuarPages].held;
              if (ua != ub) return ua > ub;
              return a->container_id < b->container_id;
            });
  std::vector<const NodeView*> targets;
  for (const auto& n : cluster.nodes) {
    if (n.node_id != node_id && !n.busy) targets.push_back(&n);
  }
  std::sort(targets.begin(), targets.end(),
            [](const NodeView* a, const NodeView* b) {
              return a->node_id < b->node_id;
            });
  for (const ContainerView* c : hosted) {
    const auto usage = c->ubc[UbcResource::kOomGuarPages].held;
    for (const NodeView* t : targets) {
      const double after = static_cast<double>(t->resident_used + usage);
      if (after <= threshold * static_cast<double>(t->ram_pages)) {
        out.action = ResolverAction::kMigrationRequested;
        out.container_id = c->container_id;
        out.target = t->node_id;
        out.detail = "rebalance";
        return out;
      }
    }
  }
  out.detail = "no node can absorb a container";
  return out;
}

Verdict OverloadPolicy::CheckContainer(std::span<const ContainerObservation>,
                                       const PolicyState&) const {
  return Verdict::kNotStressed;
}

Verdict OverloadPolicy::CheckNode(const NodeDescriptor&,
                                  std::span<const NodeObservation>,
                                  const PolicyState&) const {
  return Verdict::kNotStressed;
}

Verdict MemoryOverloadPolicy::CheckContainer(
    std::span<const ContainerObservation> history,
    const PolicyState& state) const {
  if (history.empty()) return Verdict::kNotStressed;
  const auto& curr = history.back();
  const auto& prev = history.size() >= 2 ? history[history.size() - 2] : curr;
  return MemOverloadCheck(MemScore(prev, curr), state);
}

Verdict MemoryOverloadPolicy::CheckNode(
    const NodeDescriptor& node, std::span<const NodeObservation> history,
    const PolicyState& state) const {
  if (history.empty() || node.ram_pages == 0) return Verdict::kNotStressed;
  const double used = static_cast<double>(history.back().resident_used) /
                      static_cast<double>(node.ram_pages);
  return used > ThresholdOf(state) ? Verdict::kStressed
                                   : Verdict::kNotStressed;
}

Verdict CpuAutoRegressivePolicy::CheckNode(
    const NodeDescriptor&, std::span<const NodeObservation> history,
    const PolicyState& state) const {
  if (history.empty()) return Verdict::kNotStressed;
  std::vector<double> window;
  window.reserve(history.size());
  for (const auto& obs : history) window.push_back(obs.cpu_used);
  return CpuOverloadCheck(window, state);
}

ResolverOutcome OverloadResolver::ResolveContainer(
    const std::string& container_id, const ClusterView&,
    const PolicyState&) const {
  ResolverOutcome out;
  out.container_id = container_id;
  out.detail = "container-level resolution not supported";
  return out;
}

ResolverOutcome OverloadResolver::ResolveNode(const std::string& node_id,
                                              const ClusterView&,
                                              const PolicyState&) const {
  ResolverOutcome out;
  out.source = node_id;
  out.detail = "node-level resolution not supported";
  return out;
}

ResolverOutcome MemoryResolver::ResolveContainer(
    const std::string& container_id, const ClusterView& cluster,
    const PolicyState& state) const {
  return MemResolve(container_id, cluster, state);
}

ResolverOutcome MemoryResolver::ResolveNode(const std::string& node_id,
                                            const ClusterView& cluster,
                                            const PolicyState& state) const {
  return NodeResolve(node_id, cluster, ThresholdOf(state));
}

ResolverOutcome RebalanceResolver::ResolveNode(const std::string& node_id,
                                               const ClusterView& cluster,
                                               const PolicyState& state) const {
  return NodeResolve(node_id, cluster, Numeric(state, "absorb_threshold", 0.8));
}

void PolicyRepository::Register(const std::string& resource,
                                const std::string& id,
                                std::unique_ptr<OverloadPolicy> policy) {
  policies_[{resource, id}] = std::move(policy);
}

const OverloadPolicy* PolicyRepository::Find(const std::string& resource,
                                             const std::string& id) const {
  auto it = policies_.find({resource, id});
  return it == policies_.end() ? nullptr : it->second.get();
}

void PolicyRepository::SetPolicyState(const std::string& resource,
                                      const std::string& id,
                                      PolicyState state) {
  std::lock_guard<std::mutex> lock(state_mu_);
  states_[{resource, id}] = std::move(state);
}

PolicyState PolicyRepository::GetPolicyState(const std::string& resource,
                                             const std::string& id) const {
  std::lock_guard<std::mutex> lock(state_mu_);
  auto it = states_.find({resource, id});
  return it == states_.end() ? PolicyState{} : it->second;
}

void ResolverRepository::Register(const std::string& resource,
                                  const std::string& id, int priority,
                                  std::unique_ptr<OverloadResolver> resolver) {
  registrations_.push_back({resource, id, priority, std::move(resolver)});
}

std::vector<const ResolverRepository::Registration*>
ResolverRepository::ForResource(const std::string& resource) const {
  std::vector<const Registration*> out;
  for (const auto& r : registrations_) {
    if (r.resource == resource) out.push_back(&r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Registration* a, const Registration* b) {
                     return a->priority > b->priority;
                   });
  return out;
}

void RegisterDefaultPolicies(PolicyRepository& repo) {
  repo.Register("mem", "default", std::make_unique<MemoryOverloadPolicy>());
  repo.Register("cpu", "auto_regressive_order_1",
                std::make_unique<CpuAutoRegressivePolicy>());
}

void RegisterDefaultResolvers(ResolverRepository& repo) {
  repo.Register("mem", "default", 10, std::make_unique<MemoryResolver>());
  repo.Register("cpu", "rebalance", 10, std::make_unique<RebalanceResolver>());
}

std::optional<std::pair<std::string, std::string>> ParseStateOptionName(
    const std::string& option) {
  static constexpr std::string_view kPrefix = "overload-";
  if (option.compare(0, kPrefix.size(), kPrefix) != 0) return std::nullopt;
  const std::string rest = option.substr(kPrefix.size());
  const auto dash = rest.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 == rest.size()) {
    return std::nullopt;
  }
  return std::make_pair(rest.substr(0, dash), rest.substr(dash + 1));
}

ConfigPolicyStateLoader::ConfigPolicyStateLoader(ConfigManager& config,
                                                 PolicyRepository& repo)
    : config_(config), repo_(repo) {
  const ConfigTree tree = config_.Snapshot();
  if (const ConfigSection* section = tree.FindSection(kStateSection)) {
    for (const auto& [option, value] : *section) {
      auto key = ParseStateOptionName(option);
      if (key && value.is_map()) {
        repo_.SetPolicyState(key->first, key->second, value.map());
      }
    }
  }
  subscription_ =
      config_.Subscribe(kStateSection, [this](const ConfigChange& change) {
        if (change.path != kStateSection || !change.new_value.is_map()) return;
        if (auto key = ParseStateOptionName(change.option)) {
          repo_.SetPolicyState(key->first, key->second,
                               change.new_value.map());
        }
      });
}

ConfigPolicyStateLoader::~ConfigPolicyStateLoader() {
  config_.Unsubscribe(subscription_);
}

}  // namespace ubcsim
