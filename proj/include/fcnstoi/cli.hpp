#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fcnstoi::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Runs one subcommand (mix, train, enhance, eval, gradcheck, filters).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace fcnstoi::cli
