#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdforest {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the function's domain (e.g. y outside [0,1]).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Unreadable or malformed input file.
class InputError : public Error {
public:
    using Error::Error;
};

/// Invalid tuning parameters or inconsistent inputs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Numerical failure in a quadrature-based quantity (non-finite values,
/// Cholesky failure of V(theta)).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Newton iteration did not reach the residual tolerance.
class NonConvergence : public Error {
public:
    NonConvergence(const std::string& what, double residual, std::size_t iterations)
        : Error(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    std::size_t iterations() const noexcept { return iterations_; }

private:
    double residual_;
    std::size_t iterations_;
};

/// Target moments lie on or outside the boundary of the moment space.
class BoundaryMoment : public Error {
public:
    using Error::Error;
};

/// Every tree's leaf was empty, so the similarity weights vanish.
class AllWeightsZero : public Error {
public:
    using Error::Error;
};

/// A delete-group has no tree subsample disjoint from it.
class NoCleanTrees : public Error {
public:
    using Error::Error;
};

/// Standard errors requested from a fit that was built without a plan.
class MissingPlan : public Error {
public:
    using Error::Error;
};

/// Kernel estimator denominator is zero at the query point.
class ZeroDenominator : public Error {
public:
    using Error::Error;
};

}  // namespace cdforest
