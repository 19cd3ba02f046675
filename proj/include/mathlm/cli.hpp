#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mathlm {

/// Exit status of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitIo = 1, kExitCompat = 2, kExitData = 3 };

/// Runs one `mathlm` invocation; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mathlm
