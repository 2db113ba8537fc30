#pragma once

// Entry point of the lipscope tool: parses arguments, loads the config and
// dispatches to a subcommand.
//
// Exit codes: 0 success, 1 validation error (bad flag, config or
// precondition), 2 runtime error. Nothing is written to `err` on success.

#include <ostream>
#include <string>
#include <vector>

namespace lipscope::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Subcommand names in help order.
const std::vector<std::string>& subcommands();

/// Closest candidate by edit distance, or "" when none is within 3 edits.
std::string nearest(const std::string& word, const std::vector<std::string>& candidates);

}  // namespace lipscope::cli
