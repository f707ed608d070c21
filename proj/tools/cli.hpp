#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace maskdef::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs the command line in-process. `args` excludes the program name.
/// stdin/stdout/stderr are injected so tests can drive every subcommand.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err);

}  // namespace maskdef::cli
