#pragma once

#include <string>
#include <vector>

namespace probeforge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `probeforge` tool. Returns the process exit code:
/// 0 on success, 1 on runtime or validation failure, 2 on usage errors.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace probeforge
