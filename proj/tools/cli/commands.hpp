#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace recgen::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,     // unexpected error, failed self-test
  kExitConfig = 2,      // bad flags or configuration
  kExitData = 3,        // unreadable, malformed or inconsistent inputs
  kExitDivergence = 4,  // non-finite training loss
  kExitPartial = 5,     // scaling: at least one fraction failed
};

// Runs one `recgen <subcommand> ...` invocation. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace recgen::cli
