#include "cosplace/error.hpp"

namespace cosplace {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDomain: return "E_DOMAIN";
    case ErrorCode::kInvalidConfig: return "E_CONFIG";
    case ErrorCode::kParse: return "E_PARSE";
    case ErrorCode::kDuplicateId: return "E_DUPLICATE_ID";
    case ErrorCode::kZoneMismatch: return "E_ZONE_MISMATCH";
    case ErrorCode::kEmptyPartition: return "E_EMPTY_PARTITION";
    case ErrorCode::kEmptyGroup: return "E_EMPTY_GROUP";
    case ErrorCode::kDimension: return "E_DIMENSION";
    case ErrorCode::kNotNormalized: return "E_NOT_NORMALIZED";
    case ErrorCode::kNonFinite: return "E_NON_FINITE";
    case ErrorCode::kDivergence: return "E_DIVERGENCE";
    case ErrorCode::kNotFound: return "E_NOT_FOUND";
    case ErrorCode::kIo: return "E_IO";
    case ErrorCode::kState: return "E_STATE";
    case ErrorCode::kUsage: return "E_USAGE";
  }
  return "E_UNKNOWN";
}

}  // namespace cosplace
