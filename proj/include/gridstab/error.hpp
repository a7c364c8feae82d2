#pragma once

#include <stdexcept>
#include <string>

namespace gridstab {

class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Input/config validation failure (bad indices, malformed documents, ...).
class ValidationError : public Error {
  public:
    explicit ValidationError(const std::string& what) : Error(what) {}
};

/// Iterative solver did not reach its tolerance.
class ConvergenceError : public Error {
  public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const { return residual_; }

  private:
    double residual_;
};

}  // namespace gridstab
