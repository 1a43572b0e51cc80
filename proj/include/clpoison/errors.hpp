#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace clpoison {

/// Invalid argument, shape, or configuration value.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed poison file or checkpoint (magic, version, truncation).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stored data violates its own declared constraints (e.g. |delta| > epsilon).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sample-wise perturbation set was applied to a dataset it was not built for.
class PoisonMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or an undefined operation such as normalizing a zero vector.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input for which an algorithm has no meaningful output (e.g. every entry masked).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class AttackError : public std::runtime_error {
 public:
  AttackError(const std::string& what, int iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

/// Carries every violation found while validating a configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

}  // namespace clpoison
