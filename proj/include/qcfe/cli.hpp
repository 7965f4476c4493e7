#pragma once

#include <iostream>

namespace qcfe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Entry point of the `qcfe` tool. Writes the one-line JSON summary to `out`
/// and diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace qcfe
