#pragma once

namespace posefield {

// Entry point behind the command line tool; exposed so tests can drive the
// subcommands in-process. Returns 0 on success, 1 on usage/validation
// errors, 2 on runtime failures.
int cli_main(int argc, const char* const* argv);

}  // namespace posefield
