#pragma once

#include <stdexcept>
#include <string>

namespace mizero {

/// Failure classes surfaced by the library. Codes group into three exit
/// classes used by the CLI: usage errors (2), input/format errors (3) and
/// numerical failures (4).
enum class ErrorCode {
  // usage
  InvalidArgument,
  // input / format
  FileNotFound,
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  DimensionMismatch,
  AllocationCap,
  NonUnitRow,
  DuplicateText,
  RaggedDimensions,
  MissingText,
  EmptyPool,
  MissingCoords,
  SizeMismatch,
  ShapeMismatch,
  EmptyClass,
  ClassMismatch,
  DuplicateSlideId,
  InvalidLabel,
  BadFormat,
  // numerical
  ZeroVector,
  NonFinite,
  Divergence,
};

const char* to_string(ErrorCode code);

/// Exit class for scripting: 2 = argument error, 3 = input-format error,
/// 4 = numerical failure.
int exit_class(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace mizero
