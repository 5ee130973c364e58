#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace x2face {

enum class ErrorCode {
  kPrecondition,
  kShapeMismatch,
  kResolutionMismatch,
  kBadMagic,
  kVersionMismatch,
  kLengthMismatch,
  kTensorShapeMismatch,
  kIo,
  kInvalidDataset,
  kNonFinite,
  kNotFitted,
  kUnknownLayer,
  kNotFound,
};

std::string_view error_code_name(ErrorCode code);

// Every domain failure is reported through this type. what() carries the
// message only; the CLI prefixes it with the code name.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace x2face
