#pragma once

#include <stdexcept>
#include <string>

namespace subtyper {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A caller-supplied argument violates an operation's precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Input data is unusable (empty, non-finite, misaligned).
class DataError : public Error {
public:
    using Error::Error;
};

/// A delimited file could not be parsed. Carries the 1-based location.
class ParseError : public DataError {
public:
    ParseError(const std::string& file, std::size_t row, std::size_t col, const std::string& what)
        : DataError(file + ": row " + std::to_string(row) + ", column " + std::to_string(col) + ": " + what),
          row_(row), col_(col) {}

    /// Same location, message prefixed with `context`.
    ParseError(const std::string& context, const ParseError& inner)
        : DataError(context + inner.what()), row_(inner.row_), col_(inner.col_) {}

    std::size_t row() const { return row_; }
    std::size_t col() const { return col_; }

private:
    std::size_t row_;
    std::size_t col_;
};

/// Invalid or incomplete run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN/Inf or failed to converge.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace subtyper
