#include <variant>

#include "ubcsim/control.h"
#include "ubcsim/error.h"

namespace ubcsim {
namespace {

ContainerView* MutableContainer(ClusterView& view, const std::string& id) {
  for (auto& c : view.containers) {
    if (c.container_id == id) return &c;
  }
  return nullptr;
}

void MarkBusy(ClusterView& view, const std::string& node_id) {
  for (auto& n : view.nodes) {
    if (n.node_id == node_id) n.busy = true;
  }
}

void ApplyToView(ClusterView& view, const ResolverOutcome& outcome) {
  switch (outcome.action) {
    case ResolverAction::kRaisedLimits:
      if (ContainerView* c = MutableContainer(view, outcome.container_id)) {
        if (outcome.profile) ApplyProfile(c->ubc, *outcome.profile);
      }
      break;
    case ResolverAction::kMigrationRequested:
    case ResolverAction::kReplicationRequested:
      MarkBusy(view, outcome.source);
      MarkBusy(view, outcome.target);
      break;
    case ResolverAction::kUnresolved:
      break;
  }
}

bool AwaitsFreshData(const ContainerEntry& c) {
  const ContainerObservation* latest = c.latest();
  if (latest == nullptr) return true;
  return c.last_action_ms() && latest->timestamp_ms <= *c.last_action_ms();
}

}  // namespace

std::vector<StressDecision> EvaluateStress(const StressCheckInput& input) {
  if (!input.hierarchy || !input.policies || !input.resolvers) {
    throw Error(ErrorCode::kInvalidArgument, "incomplete stress check input");
  }
  const NodeHierarchy& hier = *input.hierarchy;
  ClusterView view = hier.BuildClusterView(input.ladder, input.busy_nodes);
  std::vector<StressDecision> decisions;

  for (const auto& [resource, id_value] : input.active_policies) {
    const auto* policy_id = std::get_if<std::string>(&id_value);
    if (policy_id == nullptr) continue;
    const OverloadPolicy* policy = input.policies->Find(resource, *policy_id);
    if (policy == nullptr) continue;
    const PolicyState state = input.policies->GetPolicyState(resource,
                                                             *policy_id);
    const auto registrations = input.resolvers->ForResource(resource);

    auto resolve = [&](const std::string& entity, bool node_level) {
      StressDecision decision;
      decision.resource = resource;
      decision.entity = entity;
      decision.node_level = node_level;
      decision.outcome.container_id = node_level ? "" : entity;
      decision.outcome.detail = "no resolver";
      for (const auto* reg : registrations) {
        ResolverOutcome outcome =
            node_level ? reg->resolver->ResolveNode(entity, view, state)
                       : reg->resolver->ResolveContainer(entity, view, state);
        decision.resolver_id = reg->id;
        decision.outcome = std::move(outcome);
        if (decision.outcome.action != ResolverAction::kUnresolved) break;
      }
      ApplyToView(view, decision.outcome);
      decisions.push_back(std::move(decision));
    };

    std::vector<std::string> node_ids;
    for (const auto& n : view.nodes) node_ids.push_back(n.node_id);
    for (const std::string& node_id : node_ids) {
      const NodeEntry* node = hier.FindNode(node_id);
      if (policy->CheckNode(node->descriptor(), node->history(), state) ==
          Verdict::kStressed) {
        resolve(node_id, true);
      }
      for (const std::string& cid : node->container_ids()) {
        const ContainerEntry* c = hier.FindContainer(cid);
        if (input.pending_containers.count(cid) != 0 || AwaitsFreshData(*c)) {
          continue;
        }
        if (policy->CheckContainer(c->history(), state) ==
            Verdict::kStressed) {
          resolve(cid, false);
        }
      }
    }
  }
  return decisions;
}

Monitor::Monitor(ConfigManager& config, NodeHierarchy& hierarchy,
                 const PolicyRepository& policies,
                 const ResolverRepository& resolvers, Actlater& actlater,
                 CommandDispatcher& dispatcher,
                 std::vector<MemoryProfile> ladder, ActionLog& log)
    : config_(config),
      hierarchy_(hierarchy),
      policies_(policies),
      resolvers_(resolvers),
      actlater_(actlater),
      dispatcher_(dispatcher),
      ladder_(std::move(ladder)),
      log_(log) {
  if (auto v = config_.Get(kOverloadSection, "check_interval")) {
    period_ms_ = static_cast<SimTimeMs>(v->number() * 1000.0);
  }
  if (auto v = config_.Get(kDataSection, "max_in_memory_observations")) {
    hierarchy_.SetCapacity(static_cast<std::size_t>(v->integer()));
  }
  overload_subscription_ =
      config_.Subscribe(kOverloadSection, [this](const ConfigChange& change) {
        if (change.path == kOverloadSection &&
            change.option == "check_interval") {
          period_ms_ =
              static_cast<SimTimeMs>(change.new_value.number() * 1000.0);
        }
      });
  data_subscription_ =
      config_.Subscribe(kDataSection, [this](const ConfigChange& change) {
        if (change.path == kDataSection &&
            change.option == "max_in_memory_observations") {
          hierarchy_.SetCapacity(
              static_cast<std::size_t>(change.new_value.integer()));
        }
      });
  actlater_.AddObserver(this);
}

Monitor::~Monitor() {
  actlater_.RemoveObserver(this);
  config_.Unsubscribe(overload_subscription_);
  config_.Unsubscribe(data_subscription_);
}

std::vector<ActionRequest> Monitor::RunDueCheck(SimTimeMs now) {
  if (now < next_check_ms()) return {};
  return RunStressCheck(now);
}

std::vector<ActionRequest> Monitor::RunStressCheck(SimTimeMs now) {
  last_check_ms_ = now;
  check_times_.push_back(now);

  StressCheckInput input;
  input.hierarchy = &hierarchy_;
  input.policies = &policies_;
  input.resolvers = &resolvers_;
  if (auto active = config_.Get(kOverloadSection, "active_policies");
      active && active->is_map()) {
    input.active_policies = active->map();
  }
  input.ladder = ladder_;
  input.busy_nodes = actlater_.BusyNodes();
  input.pending_containers = actlater_.PendingContainers();

  std::vector<ActionRequest> issued;
  for (const StressDecision& d : EvaluateStress(input)) {
    const ResolverOutcome& out = d.outcome;
    const std::string container = d.node_level && out.container_id.empty()
                                      ? d.entity
                                      : out.container_id;
    if (out.action == ResolverAction::kUnresolved) {
      log_.Append({now, std::string(ResolverActionName(out.action)), container,
                   out.source, "", out.detail});
      continue;
    }
    ActionRequest req = out.ToRequest();
    req.request_id = next_request_id_++;
    log_.Append({now, std::string(ResolverActionName(out.action)),
                 req.container_id, req.source, req.target, "issued"});
    hierarchy_.MarkAction(req.container_id, now);
    issued.push_back(req);
    if (req.kind == ActionKind::kAdjustUbc) {
      Adjust(req);
    } else {
      actlater_.Submit(std::move(req));
    }
  }
  actlater_.Pump();
  return issued;
}

void Monitor::Adjust(const ActionRequest& request) {
  const ActionRequest copy = request;
  dispatcher_.Dispatch(request, [this, copy](const CommandResult& result) {
    log_.Append({Now(), std::string(ActionKindName(copy.kind)),
                 copy.container_id, copy.source, "",
                 result.ok ? "ok" : "failed: " + result.reason});
  });
}

void Monitor::OnStarted(const ActionRequest& request) {
  log_.Append({Now(), std::string(ActionKindName(request.kind)),
               request.container_id, request.source, request.target,
               "started"});
}

void Monitor::OnSucceeded(const ActionRequest& request) {
  const SimTimeMs now = Now();
  log_.Append({now, std::string(ActionKindName(request.kind)),
               request.container_id, request.source, request.target,
               "succeeded"});
  if (request.kind != ActionKind::kMigrate || !request.profile) return;
  ActionRequest raise;
  raise.request_id = next_request_id_++;
  raise.kind = ActionKind::kAdjustUbc;
  raise.container_id = request.container_id;
  raise.source = request.target;
  raise.profile = request.profile;
  log_.Append({now, std::string(ResolverActionName(
                        ResolverAction::kRaisedLimits)),
               raise.container_id, raise.source, "", "issued"});
  hierarchy_.MarkAction(raise.container_id, now);
  Adjust(raise);
}

void Monitor::OnFailed(const ActionRequest& request,
                       const std::string& reason) {
  log_.Append({Now(), std::string(ActionKindName(request.kind)),
               request.container_id, request.source, request.target,
               "failed: " + reason});
}

}  // namespace ubcsim
