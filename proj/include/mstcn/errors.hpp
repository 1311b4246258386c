#pragma once

#include <stdexcept>
#include <string>

namespace mstcn {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor/parameter shape disagreements.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Argument outside the operation's domain (bad layer index, bad factor, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered where a finite value is required.
class NumericError : public Error {
public:
    using Error::Error;
};

// Problems with run/loss/model configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed dataset content (unknown class name, empty label file, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed binary files. The kind distinguishes failure modes so callers
// and tests can tell truncation from corruption.
class FormatError : public Error {
public:
    enum class Kind {
        io,
        bad_magic,
        bad_version,
        truncated,
        dimension_overflow,
        non_finite,
        config_mismatch,
        corrupt,
    };

    FormatError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

} // namespace mstcn
