#include "ubcsim/error.h"

namespace ubcsim {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnderflow: return "UnderflowError";
    case ErrorCode::kImmuneProcess: return "ImmuneProcess";
    case ErrorCode::kNoKillableProcess: return "NoKillableProcess";
    case ErrorCode::kBarrierZero: return "BarrierZero";
    case ErrorCode::kMissingThreshold: return "MissingThreshold";
    case ErrorCode::kUnknownNode: return "UnknownNode";
    case ErrorCode::kUnknownContainer: return "UnknownContainer";
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kUnknownSection: return "UnknownSection";
    case ErrorCode::kImmutableOption: return "ImmutableOption";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kAuthFailed: return "AuthFailed";
    case ErrorCode::kDuplicateNode: return "DuplicateNode";
    case ErrorCode::kNotRegistered: return "NotRegistered";
    case ErrorCode::kNodeBusy: return "NodeBusy";
    case ErrorCode::kConnectionRefused: return "ConnectionRefused";
    case ErrorCode::kProtocol: return "ProtocolError";
    case ErrorCode::kScenario: return "ScenarioError";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kMissingArtifacts: return "MissingArtifacts";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

}  // namespace ubcsim
