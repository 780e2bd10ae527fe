#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace streamer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point for the streamer command line. Machine output (reports,
/// topology dumps, preset configs) goes to `out`; notices and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace streamer::cli
