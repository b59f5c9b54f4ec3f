#pragma once

#include <stdexcept>
#include <string>

namespace fcnstoi {

enum class ErrorCode {
  kInvalidArgument,
  kTooShortSignal,
  kUnsupportedRate,
  kDegenerateReference,
  kUtteranceTooShort,
  kLengthMismatch,
  kTapeMismatch,
  kNonFiniteGradient,
  kNonFiniteValue,
  kCheckpointFormat,
  kWavFormat,
  kInvalidMix,
  kIo,
};

const char* error_code_name(ErrorCode code);

// All library failures are reported through this type; `code()` lets callers
// tell data problems (skippable) from programming errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fcnstoi
