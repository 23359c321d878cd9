#pragma once

#include <stdexcept>
#include <string>

namespace ratgan {

/// Raised when arguments violate an operation's preconditions (shape, width, range).
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a configuration is internally inconsistent.
struct InvalidConfig : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised for malformed or truncated files.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a file carries a format version this build cannot read.
struct IncompatibleVersion : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a computation produces non-finite values.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define RATGAN_REQUIRE(cond, msg)                         \
    do {                                                  \
        if (!(cond)) throw ::ratgan::InvalidInput(msg);   \
    } while (0)

}  // namespace ratgan
