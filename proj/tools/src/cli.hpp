// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace modasr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // invalid config or failed run
inline constexpr int kExitUsage = 2;    // unknown subcommand or flag

// Runs one command line (without the program name). Diagnostics go to `err`
// as a single line; reports and progress go to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace modasr::cli
