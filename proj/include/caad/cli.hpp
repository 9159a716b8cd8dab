#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace caad {

/// Entry point of the `caad` command line tool. Subcommands: build, decode, compare, bench,
/// inspect, serve. Returns the process exit code (0 iff the requested work fully succeeded).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace caad
