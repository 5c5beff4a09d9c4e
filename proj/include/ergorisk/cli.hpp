#pragma once

#include <iosfwd>

namespace ergorisk::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNumericFault = 3;

// Parses argv and dispatches to a subcommand. Results go to `out`,
// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ergorisk::cli
