// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Exit codes: 0 success, 1 I/O or internal error,
// 2 bad flags, 3 config or validation error, 4 training divergence.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gmu {

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gmu
