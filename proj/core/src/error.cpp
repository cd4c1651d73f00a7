#include "fkb/error.hpp"

namespace fkb {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDomain: return "DomainError";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kSingularFit: return "SingularFit";
    case ErrorCode::kFormat: return "FormatError";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kRange: return "RangeError";
    case ErrorCode::kOutOfDomain: return "OutOfDomain";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kDtypeMismatch: return "DtypeMismatch";
    case ErrorCode::kCountMismatch: return "CountMismatch";
    case ErrorCode::kEmptyLutSet: return "EmptyLutSet";
    case ErrorCode::kDegeneratePoint: return "DegeneratePoint";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInsufficientMatches: return "InsufficientMatches";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kUsage: return "UsageError";
    case ErrorCode::kInternal: return "InternalError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace fkb
