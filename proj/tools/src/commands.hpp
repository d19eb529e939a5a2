#pragma once

#include <iosfwd>

namespace ssar::cli {

/// Entry point shared by the executable and the tests. Returns the process
/// exit code: 0 ok, 1 usage/config, 2 data, 3 numerical failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ssar::cli
