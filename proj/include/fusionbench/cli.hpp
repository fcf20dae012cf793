#pragma once

#include <iosfwd>

namespace fusionbench {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitIo = 3,
    kExitTraining = 4,
};

/// Entry point of the `fusionbench` executable; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace fusionbench
