#pragma once

#include <stdexcept>
#include <string>

namespace auxlm {

// Error categories map onto CLI exit codes: Io/Schema/Config -> 2,
// Integrity -> 3, everything else -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : Error {
    using Error::Error;
};

struct SchemaError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IntegrityError : Error {
    using Error::Error;
};

}  // namespace auxlm
