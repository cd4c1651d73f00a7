#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fkb {

enum class ErrorCode {
  kDomain,
  kDegenerateInput,
  kSingularFit,
  kFormat,
  kIo,
  kRange,
  kOutOfDomain,
  kDimensionMismatch,
  kEmptyDataset,
  kDtypeMismatch,
  kCountMismatch,
  kEmptyLutSet,
  kDegeneratePoint,
  kEmptyInput,
  kInsufficientMatches,
  kDegenerateConfiguration,
  kUsage,
  kInternal,
};

// Stable machine-readable name, e.g. "SingularFit".
std::string_view to_string(ErrorCode code);

// All library failures are reported through this exception type; the code
// distinguishes the failure class for callers and the CLI exit mapping.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace fkb
