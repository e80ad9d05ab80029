#pragma once

#include <stdexcept>
#include <string>

namespace slidenav {

/// Base for all library errors. Subclasses map to CLI exit codes:
/// validation/config -> 2, missing dependency -> 3, backend -> 4.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or inconsistent input data (files, dimensions, value ranges).
class ValidationError : public Error {
public:
    using Error::Error;
};

class ManifestError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DimensionMismatchError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ValueRangeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Bad run or model configuration (level factors, divisibility, unknown names).
class ConfigError : public Error {
public:
    using Error::Error;
};

class LevelNotFoundError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf fed into a numeric kernel.
class NumericError : public Error {
public:
    using Error::Error;
};

class ResampleError : public Error {
public:
    using Error::Error;
};

class PartitionError : public Error {
public:
    using Error::Error;
};

/// Dataset precondition failed before work started (e.g. missing annotations).
class DatasetError : public Error {
public:
    using Error::Error;
};

/// Memory-bank consistency violation (step gaps, duplicate regions).
class ConsistencyError : public Error {
public:
    using Error::Error;
};

/// Decision/encoder backend failure (transport, protocol, adapter).
class BackendError : public Error {
public:
    using Error::Error;
};

/// A required upstream artifact is missing; message names the producing command.
class DependencyError : public Error {
public:
    using Error::Error;
};

/// Metric precondition failed (constant input, zero mass, empty mask).
class MetricError : public Error {
public:
    using Error::Error;
};

}  // namespace slidenav
