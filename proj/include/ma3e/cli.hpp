#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ma3e::cli {

// Exit codes: 0 success, 1 validation error, 2 runtime failure.
inline constexpr int kOk = 0;
inline constexpr int kValidationError = 1;
inline constexpr int kRuntimeFailure = 2;

/// Runs one subcommand (synth, compose, pretrain, reconstruct, plan, gradcheck,
/// ot-solve). `args` excludes the program name. Diagnostics go to `err` as a
/// single line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ma3e::cli
