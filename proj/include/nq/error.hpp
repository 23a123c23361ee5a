#pragma once

#include <stdexcept>
#include <string>

namespace nq {

/// Base class for every error this library raises on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInput : Error {
    using Error::Error;
};

struct InvalidConfig : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct CapacityExceeded : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// Model-file loading errors.
struct BadMagic : FormatError {
    using FormatError::FormatError;
};

struct TruncatedFile : FormatError {
    using FormatError::FormatError;
};

struct ChecksumMismatch : FormatError {
    using FormatError::FormatError;
};

} // namespace nq
