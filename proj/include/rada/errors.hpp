#pragma once

#include <stdexcept>
#include <string>

namespace rada {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Input is well-formed but degenerate (zero row, empty batch, ...).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

// A documented precondition of an operation was violated.
class ContractError : public Error {
public:
    using Error::Error;
};

// A configuration value is out of range or unknown.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Filesystem failure (open, read, write).
class IoError : public Error {
public:
    using Error::Error;
};

// Training diverged (NaN/Inf loss).
class NumericError : public Error {
public:
    using Error::Error;
};

// The finite-difference oracle saw a non-finite function value.
class OracleError : public Error {
public:
    using Error::Error;
};

enum class FormatErrorKind {
    bad_magic,
    version_mismatch,
    truncated,
    checksum_mismatch,
    wrong_kind,
    malformed,
};

inline const char* to_string(FormatErrorKind kind) {
    switch (kind) {
        case FormatErrorKind::bad_magic: return "bad magic";
        case FormatErrorKind::version_mismatch: return "version mismatch";
        case FormatErrorKind::truncated: return "truncated payload";
        case FormatErrorKind::checksum_mismatch: return "checksum mismatch";
        case FormatErrorKind::wrong_kind: return "wrong record kind";
        case FormatErrorKind::malformed: return "malformed payload";
    }
    return "unknown";
}

// Binary file could not be decoded; kind() tells the corruption class.
class FormatError : public Error {
public:
    FormatError(FormatErrorKind kind, const std::string& detail)
        : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

    FormatErrorKind kind() const noexcept { return kind_; }

private:
    FormatErrorKind kind_;
};

}  // namespace rada
