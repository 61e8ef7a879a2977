#pragma once

#include <stdexcept>
#include <string>

namespace qvi {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::string msg, std::size_t offset)
        : Error(std::move(msg)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// Domain error during expression evaluation; carries the offending subexpression.
class EvalError : public Error {
public:
    EvalError(const std::string& what, std::string subexpr)
        : Error(what + " in `" + subexpr + "`"), subexpr_(std::move(subexpr)) {}
    const std::string& subexpression() const { return subexpr_; }

private:
    std::string subexpr_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class GridMismatchError : public Error {
public:
    using Error::Error;
};

/// Loop enumeration would exceed the configured chain budget.
class BudgetError : public Error {
public:
    using Error::Error;
};

/// Inner iteration of a time step did not reach inner_tol.
class StepError : public Error {
public:
    StepError(const std::string& msg, double t, double last_residual)
        : Error(msg), t_(t), last_residual_(last_residual) {}
    double time() const { return t_; }
    double last_residual() const { return last_residual_; }

private:
    double t_;
    double last_residual_;
};

}  // namespace qvi
