#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gcml::cli {

// Entry point shared by the gcml binary and the CLI tests. Returns the
// process exit code; 0 only when every output was written.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gcml::cli
