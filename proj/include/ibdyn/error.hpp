#pragma once

#include <stdexcept>
#include <string>

namespace ibdyn {

// Domain errors thrown by the library. The CLI maps each family to its own
// exit code, so new error kinds should derive from one of these.

class InvalidDistribution : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, long long iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  long long iteration() const noexcept { return iteration_; }

 private:
  long long iteration_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ibdyn
