#include "cat/common/error.hpp"

namespace cat {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::HeadDivisibility: return "HeadDivisibility";
    case ErrorKind::RankMismatch: return "RankMismatch";
    case ErrorKind::NonScalarLoss: return "NonScalarLoss";
    case ErrorKind::MissingGradient: return "MissingGradient";
    case ErrorKind::InvalidMode: return "InvalidMode";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::InvalidBox: return "InvalidBox";
    case ErrorKind::MissingKey: return "MissingKey";
    case ErrorKind::MalformedNumber: return "MalformedNumber";
    case ErrorKind::FieldCount: return "FieldCount";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::EmptyCloud: return "EmptyCloud";
    case ErrorKind::EmptySet: return "EmptySet";
    case ErrorKind::UnmatchedObject: return "UnmatchedObject";
    case ErrorKind::FrameMismatch: return "FrameMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

}  // namespace cat
