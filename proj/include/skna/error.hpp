#pragma once

#include <stdexcept>
#include <string>

namespace skna {

enum class ErrorCode {
  InvalidConfig,
  InvalidBand,
  Length,
  Shape,
  NotFound,
  UndefinedBand,
  Stratification,
  ZeroVariance,
  BadMagic,
  Truncated,
  VersionMismatch,
  Checksum,
  Io,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  bool is_parse_error() const noexcept {
    return code_ == ErrorCode::BadMagic || code_ == ErrorCode::Truncated ||
           code_ == ErrorCode::VersionMismatch || code_ == ErrorCode::Checksum;
  }

 private:
  ErrorCode code_;
};

}  // namespace skna
