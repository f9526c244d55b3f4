#include "mizero/error.hpp"

namespace mizero {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::AllocationCap: return "AllocationCap";
    case ErrorCode::NonUnitRow: return "NonUnitRow";
    case ErrorCode::DuplicateText: return "DuplicateText";
    case ErrorCode::RaggedDimensions: return "RaggedDimensions";
    case ErrorCode::MissingText: return "MissingText";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::MissingCoords: return "MissingCoords";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::ClassMismatch: return "ClassMismatch";
    case ErrorCode::DuplicateSlideId: return "DuplicateSlideId";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::BadFormat: return "BadFormat";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::Divergence: return "Divergence";
  }
  return "Unknown";
}

int exit_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::ZeroVector:
    case ErrorCode::NonFinite:
    case ErrorCode::Divergence:
      return 4;
    default:
      return 3;
  }
}

}  // namespace mizero
