#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ptl {

// Runs one command line (args[0] is the program name). Returns the process
// exit status: 0 success, 1 training divergence, 2 input or configuration
// error, 3 lock held.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace ptl
