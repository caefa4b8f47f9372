#pragma once

#include <stdexcept>
#include <string>

namespace tempoc {

/// A caller broke a documented precondition (shape, range, alignment).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Configuration or input-file problems: unknown keys, malformed JSON, missing files.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint payload failed its checksum or is truncated.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a NaN/Inf loss term.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(long long iteration, std::string term)
        : std::runtime_error("non-finite loss term '" + term + "' at iteration " +
                             std::to_string(iteration)),
          iteration_(iteration), term_(std::move(term)) {}

    long long iteration() const noexcept { return iteration_; }
    const std::string& term() const noexcept { return term_; }

private:
    long long iteration_;
    std::string term_;
};

}  // namespace tempoc

#define TEMPOC_REQUIRE(cond, msg)                                   \
    do {                                                            \
        if (!(cond)) throw ::tempoc::ContractViolation(msg);        \
    } while (false)
