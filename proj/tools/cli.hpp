#pragma once

#include <ostream>

namespace tempoc::cli {

/// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kContractViolation = 1;
inline constexpr int kConfigError = 2;

/// Parses and runs one invocation:
///   tempoc <synth-flicker|train|infer|eval|iterate|gradcheck> [--config FILE] [--set key=value]... [options]
/// Results go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tempoc::cli
