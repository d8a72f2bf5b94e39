#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace singhyp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// The integrator gave up: blow-up past the norm guard or step-size underflow.
class IntegrationError : public Error {
 public:
  enum class Kind { BlowUp, StepUnderflow, NonFinite };

  IntegrationError(Kind kind, double time, const std::string& what)
      : Error(what), kind_(kind), time_(time) {}

  Kind kind() const { return kind_; }
  /// Flow time (signed) at which integration stopped.
  double time() const { return time_; }

 private:
  Kind kind_;
  double time_;
};

/// The singular values of a windowed cocycle show no separation at the
/// requested index.
class NoGapError : public Error {
 public:
  using Error::Error;
};

/// Normal bundle undefined because the base point is (numerically) a zero.
class DegenerateNormalError : public Error {
 public:
  using Error::Error;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace singhyp
