#pragma once

#include <stdexcept>
#include <string>

namespace gsr {

// Error taxonomy mirrors the CLI exit codes: usage 1, I/O 2, numeric 3, enhancer 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct EnhancerError : Error {
    using Error::Error;
};

} // namespace gsr
