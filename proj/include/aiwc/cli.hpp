#pragma once

// The `aiwc` command line. Exit codes:
//   0  success
//   1  unexpected internal error
//   2  usage, kernel parse, configuration, malformed trace or schema errors
//   3  simulation fault (barrier divergence, out-of-bounds access)
//   4  resource cap exceeded (step limit, metric memory cap)

#include <iosfwd>
#include <string>
#include <vector>

namespace aiwc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitFault = 3;
inline constexpr int kExitCap = 4;

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace aiwc::cli
