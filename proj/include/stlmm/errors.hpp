#pragma once

#include <stdexcept>
#include <string>

namespace stlmm {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument to a pure function (negative distance, bad range, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A matrix that must be positive definite failed to factorize.
class FactorizationError : public Error {
public:
    FactorizationError(const std::string& what, long pivot = -1)
        : Error(what), pivot_(pivot) {}
    long pivot() const noexcept { return pivot_; }

private:
    long pivot_;
};

/// X^T Sigma^{-1} X is rank deficient.
class EstimabilityError : public Error {
public:
    EstimabilityError(const std::string& what, long null_dim)
        : Error(what), null_dim_(null_dim) {}
    long null_dimension() const noexcept { return null_dim_; }

private:
    long null_dim_;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid combination of options.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace stlmm
