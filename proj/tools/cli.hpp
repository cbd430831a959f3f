#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cldd::cli {

enum ExitCode : int {
    kSuccess = 0,
    kUsageError = 1,
    kRuntimeError = 2,
};

/// Runs `cldd <args...>` (args exclude the program name). Diagnostics go to `err`,
/// human-readable summaries to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cldd::cli
