#ifndef UBCSIM_OBSERVATION_H_
#define UBCSIM_OBSERVATION_H_

// Records exchanged between node agents and the control server.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ubcsim/ubc.h"

namespace ubcsim {

using SimTimeMs = std::int64_t;

struct NodeDescriptor {
  std::string node_id;
  std::uint64_t ram_pages = 0;
  std::uint64_t swap_pages = 0;

  bool operator==(const NodeDescriptor&) const = default;
};

struct ContainerSample {
  std::string container_id;
  UbcTable ubc;
  std::string replica_group;  // empty when not replicated

  bool operator==(const ContainerSample&) const = default;
};

// One node's snapshot, sent client -> server every sampling period.
struct LoadObservation {
  SimTimeMs timestamp_ms = 0;
  std::string node_id;
  std::vector<ContainerSample> containers;
  std::uint64_t resident_used = 0;
  std::uint64_t swap_used = 0;
  double cpu_used = 0.0;

  bool operator==(const LoadObservation&) const = default;
};

// Per-container slice of a LoadObservation, as stored by the hierarchy.
struct ContainerObservation {
  SimTimeMs timestamp_ms = 0;
  std::string container_id;
  UbcTable ubc;

  bool operator==(const ContainerObservation&) const = default;
};

struct NodeObservation {
  SimTimeMs timestamp_ms = 0;
  std::uint64_t resident_used = 0;
  std::uint64_t swap_used = 0;
  double cpu_used = 0.0;

  bool operator==(const NodeObservation&) const = default;
};

enum class ActionKind { kAdjustUbc, kMigrate, kReplicate };

std::string_view ActionKindName(ActionKind kind);
std::optional<ActionKind> ParseActionKind(std::string_view name);

struct ActionRequest {
  std::uint64_t request_id = 0;
  ActionKind kind = ActionKind::kAdjustUbc;
  std::string container_id;
  std::string source;
  std::string target;  // Migrate/Replicate only
  // AdjustUbc: the profile to apply. Migrate: the profile to apply on the
  // target once the move succeeds (absent for plain rebalancing moves).
  std::optional<MemoryProfile> profile;
  std::string image_id;  // Replicate only

  // Nodes whose transfer capacity the request occupies.
  std::vector<std::string> InvolvedNodes() const;

  bool operator==(const ActionRequest&) const = default;
};

struct CommandResult {
  std::uint64_t request_id = 0;
  bool ok = false;
  std::string reason;

  bool operator==(const CommandResult&) const = default;
};

inline constexpr std::string_view kInsufficientCheckpointMemory =
    "insufficient memory for checkpoint";

}  // namespace ubcsim

#endif  // UBCSIM_OBSERVATION_H_
