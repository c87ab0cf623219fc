#pragma once

#include <string>
#include <vector>

namespace charadial::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataFailure = 2, kNumericFailure = 3 };

/// Parses and runs one subcommand; never throws.
int run(int argc, const char* const* argv);

inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"charadial"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace charadial::cli
