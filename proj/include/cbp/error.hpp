#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cbp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

/// X^T W X is rank deficient. `columns()` lists the design columns that
/// the pivoted factorization could not resolve.
class SingularDesignError : public Error {
public:
    SingularDesignError(const std::string& what, std::vector<int> columns)
        : Error(what), columns_(std::move(columns)) {}

    const std::vector<int>& columns() const noexcept { return columns_; }

private:
    std::vector<int> columns_;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

/// Raised when a bounded minimization fails; carries the best point seen.
class OptimizationError : public NumericalError {
public:
    OptimizationError(const std::string& what, std::vector<double> best_point, double best_value)
        : NumericalError(what), best_point_(std::move(best_point)), best_value_(best_value) {}

    const std::vector<double>& best_point() const noexcept { return best_point_; }
    double best_value() const noexcept { return best_value_; }

private:
    std::vector<double> best_point_;
    double best_value_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace cbp
