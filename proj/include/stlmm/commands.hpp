#pragma once

namespace stlmm {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitUsage = 2,
    kExitData = 3,
    kExitNonConverged = 4,
};

/// Entry point of the `stlmm` command-line tool (fit, predict,
/// semivariogram, simulate, bench).
int run_cli(int argc, char** argv);

}  // namespace stlmm
