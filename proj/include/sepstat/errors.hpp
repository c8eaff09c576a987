#ifndef SEPSTAT_ERRORS_HPP
#define SEPSTAT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sepstat {

/// Base class of every exception thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what_arg) : std::runtime_error(what_arg) {}
};

/// Shape, order, or conformability violation in an array operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A requested allocation exceeds the configured element budget.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Malformed text input: bad header, non-numeric field, wrong field count.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Structurally invalid data: missing cells, duplicate cells, unlabeled
/// series, degenerate (all-zero) panels.
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerically meaningless request: near-zero trace divisor, bandwidth
/// larger than the available lags, ill-conditioned score scaling.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Simulation kernel is not positive semi-definite even after jitter.
class KernelError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration supplied by the caller; the CLI maps this to a
/// usage error exit code.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace sepstat

#endif // SEPSTAT_ERRORS_HPP
