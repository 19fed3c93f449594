#pragma once

#include <stdexcept>
#include <string>

namespace distnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or layer extents do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

class BoundsError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent configuration (model, grid, synth, CLI).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or insufficient input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced by a computation or a non-finite loss/gradient.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

/// Checkpoint written by an incompatible format or model configuration.
class VersionError : public Error {
public:
    using Error::Error;
};

} // namespace distnet
