#pragma once

#include <stdexcept>
#include <string>

namespace mkcaps {

/* Error taxonomy; the CLI maps these onto exit codes. */

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or inconsistent input files (matrices, manifests, checkpoints).
class DataError : public Error {
public:
    using Error::Error;
};

// Input that is syntactically fine but statistically unusable
// (e.g. a zero-variance series fed to a correlation).
class DegenerateInputError : public DataError {
public:
    using DataError::DataError;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

// API misuse: a precondition the caller was responsible for.
class ContractError : public Error {
public:
    using Error::Error;
};

} // namespace mkcaps
