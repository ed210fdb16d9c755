#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace loadtl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Matrix/tensor shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input data violates a contract (negative load, duplicate hour, empty range, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed text input. Carries the 1-based line number when one is known (0 otherwise).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Checkpoint document is unreadable, has an unknown version, or does not fit the requested model.
class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure; message names the path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace loadtl
