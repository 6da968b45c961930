#pragma once

#include <string>
#include <vector>

namespace initfeat {

/// Entry point of the initfeat command-line tool. Returns the process exit
/// status: 0 success, 1 usage error, 2 data error.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace initfeat
