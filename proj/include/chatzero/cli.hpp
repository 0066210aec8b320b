#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace chatzero {

// Environment variable naming a default config file.
inline constexpr const char* kConfigEnv = "CHATZERO_CONFIG";

// Runs one subcommand: build-corpus, coverage, train, generate, evaluate or
// compare. args excludes the program name. Returns the exit status.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace chatzero
