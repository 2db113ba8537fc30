#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lipscope {

/// Incompatible operand shapes (matmul, im2col, layer input, ...).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on a spec/config value does not hold.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(std::vector<std::string> violations);
  explicit ValidationError(const std::string& violation)
      : ValidationError(std::vector<std::string>{violation}) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// An iterative method stopped at its iteration cap. Carries the last iterate.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate, double last_value)
      : std::runtime_error(what), last_iterate_(std::move(last_iterate)), last_value_(last_value) {}

  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
  double last_value() const noexcept { return last_value_; }

 private:
  std::vector<double> last_iterate_;
  double last_value_;
};

class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite (or out-of-range) intermediate value during a forward pass.
class OverflowError : public std::runtime_error {
 public:
  OverflowError(const std::string& what, std::size_t layer_index)
      : std::runtime_error(what), layer_index_(layer_index) {}

  std::size_t layer_index() const noexcept { return layer_index_; }

 private:
  std::size_t layer_index_;
};

/// A computation would exceed a configured resource guard.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lipscope
