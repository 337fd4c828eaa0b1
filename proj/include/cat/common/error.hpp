#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cat {

enum class ErrorKind {
  NonPositiveDepth,
  ShapeMismatch,
  HeadDivisibility,
  RankMismatch,
  NonScalarLoss,
  MissingGradient,
  InvalidMode,
  IndexOutOfRange,
  InvalidBox,
  MissingKey,
  MalformedNumber,
  FieldCount,
  TruncatedFile,
  EmptyCloud,
  EmptySet,
  UnmatchedObject,
  FrameMismatch,
  NonFiniteLoss,
  InvalidConfig,
  CheckpointMismatch,
  Io,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this type. The kind is the
// machine-parseable category the CLI prints.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace cat
