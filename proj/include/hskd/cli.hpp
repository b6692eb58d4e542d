#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hskd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Runs one subcommand (gen-data, train, shkd, analyze, ablate). `args`
// excludes the program name. Progress goes to `out`, problems to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hskd::cli
