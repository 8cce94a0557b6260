#ifndef OCNET_ERRORS_HPP_
#define OCNET_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace ocnet {

// Bad structural configuration (shapes, divisibility, missing files).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad runtime input (wrong dims, out-of-range labels, non-finite data).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure during computation (NaN/Inf intermediates, zero norms).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ocnet

#endif  // OCNET_ERRORS_HPP_
