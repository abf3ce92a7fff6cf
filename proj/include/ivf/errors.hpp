#pragma once

#include <stdexcept>
#include <string>

namespace ivf {

// Error taxonomy mirrors the CLI exit codes: config/shape -> 2,
// numeric -> 3, io -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ContractError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

}  // namespace ivf
