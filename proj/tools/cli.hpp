// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace taskmerge::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kIoError = 2,
    kIncompatible = 3,
    kInvalidArguments = 4,
};

/// Runs the command line (args excludes the program name). Data goes to
/// `out`, logs and usage text to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace taskmerge::cli
