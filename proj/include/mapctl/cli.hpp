#ifndef MAPCTL_CLI_HPP
#define MAPCTL_CLI_HPP

#include <iosfwd>

namespace mapctl {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitInvalid = 1,  // usage, validation or input errors
    kExitCrash = 2,    // the experiment ran but nothing completed
};

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mapctl

#endif  // MAPCTL_CLI_HPP
