#include "ubcsim/control.h"

#include "ubcsim/error.h"

namespace ubcsim {
namespace {

class ClusterViewBuilder final : public HierarchyVisitor {
 public:
  ClusterViewBuilder(ClusterView& view, const std::set<std::string>& busy)
      : view_(view), busy_(busy) {}

  void EnterNode(const NodeEntry& node) override {
    NodeView n;
    n.node_id = node.id();
    n.ram_pages = node.descriptor().ram_pages;
    n.swap_pages = node.descriptor().swap_pages;
    if (const NodeObservation* obs = node.latest()) {
      n.resident_used = obs->resident_used;
    }
    n.busy = busy_.count(node.id()) != 0;
    view_.nodes.push_back(std::move(n));
  }

  void EnterContainer(const ContainerEntry& container) override {
    const ContainerObservation* obs = container.latest();
    if (obs == nullptr) return;
    view_.containers.push_back({container.id(), container.node_id(),
                                container.replica_group(), obs->ubc});
  }

 private:
  ClusterView& view_;
  const std::set<std::string>& busy_;
};

}  // namespace

NodeHierarchy::NodeHierarchy(std::string datacentre_id, std::size_t capacity)
    : datacentre_id_(std::move(datacentre_id)), capacity_(capacity) {
  if (capacity_ == 0) {
    throw Error(ErrorCode::kInvalidArgument, "ring capacity must be positive");
  }
}

template <typename T>
void NodeHierarchy::Append(std::vector<T>& ring, T value) {
  ring.push_back(std::move(value));
  if (ring.size() > capacity_) {
    ring.erase(ring.begin(),
               ring.begin() + static_cast<std::ptrdiff_t>(ring.size() -
                                                          capacity_));
  }
}

void NodeHierarchy::SetCapacity(std::size_t capacity) {
  if (capacity == 0) {
    throw Error(ErrorCode::kInvalidArgument, "ring capacity must be positive");
  }
  capacity_ = capacity;
  auto trim = [this](auto& ring) {
    if (ring.size() > capacity_) {
      ring.erase(ring.begin(),
                 ring.begin() + static_cast<std::ptrdiff_t>(ring.size() -
                                                            capacity_));
    }
  };
  for (auto& [id, node] : nodes_) trim(node.history_);
  for (auto& [id, container] : containers_) trim(container.history_);
}

void NodeHierarchy::RegisterNode(const NodeDescriptor& node) {
  nodes_[node.node_id].descriptor_ = node;
}

bool NodeHierarchy::HasNode(const std::string& node_id) const {
  return nodes_.count(node_id) != 0;
}

void NodeHierarchy::RecordObservation(const LoadObservation& obs) {
  auto it = nodes_.find(obs.node_id);
  if (it == nodes_.end()) {
    throw Error(ErrorCode::kUnknownNode, obs.node_id);
  }
  NodeEntry& node = it->second;
  if (node.latest() == nullptr ||
      obs.timestamp_ms > node.latest()->timestamp_ms) {
    Append(node.history_, NodeObservation{obs.timestamp_ms, obs.resident_used,
                                          obs.swap_used, obs.cpu_used});
  }

  std::set<std::string> listed;
  for (const ContainerSample& sample : obs.containers) {
    listed.insert(sample.container_id);
    ContainerEntry& c = containers_[sample.container_id];
    c.id_ = sample.container_id;
    if (c.node_id_ != obs.node_id) {
      if (!c.node_id_.empty()) {
        nodes_[c.node_id_].containers_.erase(c.id_);
      }
      c.node_id_ = obs.node_id;
      node.containers_.insert(c.id_);
    }
    c.replica_group_ = sample.replica_group;
    if (c.latest() == nullptr || obs.timestamp_ms > c.latest()->timestamp_ms) {
      Append(c.history_, ContainerObservation{obs.timestamp_ms,
                                              sample.container_id, sample.ubc});
    }
  }
  for (auto cit = node.containers_.begin(); cit != node.containers_.end();) {
    if (listed.count(*cit) == 0) {
      containers_[*cit].node_id_.clear();
      cit = node.containers_.erase(cit);
    } else {
      ++cit;
    }
  }
}

void NodeHierarchy::MarkAction(const std::string& container_id,
                               SimTimeMs when) {
  auto it = containers_.find(container_id);
  if (it == containers_.end()) {
    throw Error(ErrorCode::kUnknownContainer, container_id);
  }
  it->second.last_action_ms_ = when;
}

const NodeEntry* NodeHierarchy::FindNode(const std::string& node_id) const {
  auto it = nodes_.find(node_id);
  return it == nodes_.end() ? nullptr : &it->second;
}

const ContainerEntry* NodeHierarchy::FindContainer(
    const std::string& container_id) const {
  auto it = containers_.find(container_id);
  return it == containers_.end() ? nullptr : &it->second;
}

void NodeHierarchy::Visit(HierarchyVisitor& visitor) const {
  visitor.EnterDataCentre(datacentre_id_);
  for (const auto& [node_id, node] : nodes_) {
    visitor.EnterNode(node);
    for (const std::string& id : node.containers_) {
      const ContainerEntry& container = containers_.at(id);
      visitor.EnterContainer(container);
      visitor.LeaveContainer(container);
    }
    visitor.LeaveNode(node);
  }
  visitor.LeaveDataCentre(datacentre_id_);
}

ClusterView NodeHierarchy::BuildClusterView(
    std::vector<MemoryProfile> ladder,
    const std::set<std::string>& busy_nodes) const {
  ClusterView view;
  view.ladder = std::move(ladder);
  ClusterViewBuilder builder(view, busy_nodes);
  Visit(builder);
  return view;
}

}  // namespace ubcsim
