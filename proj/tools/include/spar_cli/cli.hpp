#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spar::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name. Diagnostics go to `err` as one line
// starting with "ERROR:".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spar::cli
