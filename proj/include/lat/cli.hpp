#pragma once

// The `latent` command line: gen, train, eval, diagnose, project, export.

#include <iosfwd>

namespace lat::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one invocation and returns the process exit code. Reports go to
/// `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lat::cli
