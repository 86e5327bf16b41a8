#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace jointlong {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kJobsEnv = "JOINTLONG_JOBS";

enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitNumerical = 4 };

// Runs the command line `args` (args[0] is the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace jointlong
