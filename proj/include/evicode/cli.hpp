#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace evicode::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 1,
    kDataMismatch = 2,
    kCompletedWithErrors = 3,
};

/// Runs the command line tool; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evicode::cli
