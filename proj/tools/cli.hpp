#pragma once

#include <string>
#include <vector>

namespace atl::cli {

enum ExitCode { kSuccess = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Entry point shared by the `atl` binary and the tests.
int run(int argc, const char* const* argv);

}  // namespace atl::cli
