#pragma once

#include <stdexcept>
#include <string>

namespace cnfik {

/// Mismatched vector/matrix sizes or an index out of range.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input file (robot spec, checkpoint, CSV, config).
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint does not belong to the robot it is being used with.
class SignatureError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// ODE integration failure. Carries the time at which the step failed.
class SolverError : public std::runtime_error {
public:
  SolverError(const std::string& msg, double t_fail)
      : std::runtime_error(msg), t(t_fail) {}
  double t;
};

/// Training aborted (repeated non-finite losses or gradients).
class TrainAbortError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace cnfik
