#include "skna/error.hpp"

namespace skna {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "invalid_config";
    case ErrorCode::InvalidBand: return "invalid_band";
    case ErrorCode::Length: return "length";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::UndefinedBand: return "undefined_band";
    case ErrorCode::Stratification: return "stratification";
    case ErrorCode::ZeroVariance: return "zero_variance";
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::VersionMismatch: return "version_mismatch";
    case ErrorCode::Checksum: return "checksum";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

}  // namespace skna
