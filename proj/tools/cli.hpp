#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qrw::cli {

// Runs one subcommand. Returns 0 on success, 2 on a usage error and 1 on a
// runtime error; messages go to `err`, the one-line summary to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qrw::cli
