#pragma once

#include <stdexcept>
#include <string>

namespace ccnn {

/// Base class for every error raised by the toolkit. The exit code is what
/// the command line tool returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual int exit_code() const noexcept { return 1; }
};

/// Invalid configuration or command line arguments.
class ConfigError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

/// Malformed, inconsistent or missing input data.
class DataError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 3; }
};

/// Errors in persisted file layouts (CSV, .cmx, .prm, manifests).
class FormatError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite values produced during computation.
class NumericalError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 4; }
};

} // namespace ccnn
