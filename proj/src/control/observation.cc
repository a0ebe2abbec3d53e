#include "ubcsim/observation.h"

namespace ubcsim {

std::string_view ActionKindName(ActionKind kind) {
  switch (kind) {
    case ActionKind::kAdjustUbc: return "AdjustUbc";
    case ActionKind::kMigrate: return "Migrate";
    case ActionKind::kReplicate: return "Replicate";
  }
  return "Unknown";
}

std::optional<ActionKind> ParseActionKind(std::string_view name) {
  for (ActionKind kind :
       {ActionKind::kAdjustUbc, ActionKind::kMigrate, ActionKind::kReplicate}) {
    if (ActionKindName(kind) == name) return kind;
  }
  return std::nullopt;
}

std::vector<std::string> ActionRequest::InvolvedNodes() const {
  if (kind == ActionKind::kAdjustUbc || target.empty() || target == source) {
    return {source};
  }
  return {source, target};
}

}  // namespace ubcsim
