#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace skna::cli {

inline constexpr const char* kToolVersion = "1.0.0";

// Exit codes shared by every command.
enum Exit : int { kOk = 0, kFailure = 1, kMissingFile = 2, kBadFlag = 3, kVersionMismatch = 4 };

// Runs one command line, program name excluded. Failures print
// {"code", "message", "context"} as one JSON line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace skna::cli
