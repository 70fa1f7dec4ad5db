#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cosplace {

/// Machine-readable error category carried by every exception the library throws.
enum class ErrorCode {
  kDomain,          // argument outside the mathematical domain of an operation
  kInvalidConfig,   // configuration invariant violated
  kParse,           // malformed manifest, codec string, or file
  kDuplicateId,
  kZoneMismatch,
  kEmptyPartition,  // no class survives filtering
  kEmptyGroup,      // a used group cannot be trained on
  kDimension,
  kNotNormalized,
  kNonFinite,
  kDivergence,
  kNotFound,
  kIo,
  kState,           // operation called in the wrong lifecycle state
  kUsage,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cosplace
