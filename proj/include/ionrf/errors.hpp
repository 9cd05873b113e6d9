#pragma once

#include <stdexcept>
#include <string>

namespace ionrf {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

// Raised by iterative solvers that exhaust their budget.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

// B(z) <= 0 somewhere a resonance was requested.
class FieldSignError : public Error {
public:
    using Error::Error;
};

class RankDeficiencyError : public Error {
public:
    RankDeficiencyError(const std::string& what, std::string parameter)
        : Error(what), parameter_(std::move(parameter)) {}
    const std::string& parameter() const { return parameter_; }

private:
    std::string parameter_;
};

class NormalizationError : public Error {
public:
    using Error::Error;
};

class ThermometryError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool condition, const char* message) {
    if (!condition) throw InvalidInput(message);
}

} // namespace detail

} // namespace ionrf
