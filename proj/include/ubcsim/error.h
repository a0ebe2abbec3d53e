#ifndef UBCSIM_ERROR_H_
#define UBCSIM_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace ubcsim {

// Every failure the library reports carries one of these codes. Denials and
// other expected outcomes are returned as values, never thrown.
enum class ErrorCode {
  kInvalidArgument,
  kUnderflow,
  kImmuneProcess,
  kNoKillableProcess,
  kBarrierZero,
  kMissingThreshold,
  kUnknownNode,
  kUnknownContainer,
  kParse,
  kUnknownSection,
  kImmutableOption,
  kIo,
  kAuthFailed,
  kDuplicateNode,
  kNotRegistered,
  kNodeBusy,
  kConnectionRefused,
  kProtocol,
  kScenario,
  kInvariantViolation,
  kMissingArtifacts,
};

std::string_view ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ubcsim

#endif  // UBCSIM_ERROR_H_
