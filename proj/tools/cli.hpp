#pragma once

#include <iosfwd>

namespace engage::cli {

/// Parses the command line, runs one subcommand and returns the process
/// exit code (0 ok, 1 usage, 2 data, 3 numeric).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace engage::cli
