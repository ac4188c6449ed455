// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace kopt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInfrastructure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRejected = 3;  // verification or lint failure

// The `kopt` command line, callable in-process.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kopt
