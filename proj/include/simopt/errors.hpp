#pragma once

#include <stdexcept>
#include <string>

namespace simopt {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SIMOPT_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

SIMOPT_DEFINE_ERROR(InvalidInput);
SIMOPT_DEFINE_ERROR(EmptyTrajectory);
SIMOPT_DEFINE_ERROR(BudgetExceeded);
SIMOPT_DEFINE_ERROR(StateMismatch);
SIMOPT_DEFINE_ERROR(UnknownVariable);
SIMOPT_DEFINE_ERROR(UnreachableObjective);
SIMOPT_DEFINE_ERROR(InsufficientData);
SIMOPT_DEFINE_ERROR(TrainingDiverged);
SIMOPT_DEFINE_ERROR(InvalidK);
SIMOPT_DEFINE_ERROR(IllConditioned);
SIMOPT_DEFINE_ERROR(UnknownAlgorithm);
SIMOPT_DEFINE_ERROR(MissingReference);
SIMOPT_DEFINE_ERROR(HardCapacityViolated);
SIMOPT_DEFINE_ERROR(SchemaError);
SIMOPT_DEFINE_ERROR(OperatorFailure);

#undef SIMOPT_DEFINE_ERROR

/// Raised when the causal advisor cannot produce a usable answer.
class AdvisorUnavailable : public Error {
 public:
  explicit AdvisorUnavailable(const std::string& what, int status = 0)
      : Error("AdvisorUnavailable: " + what), status_(status) {}
  /// HTTP status of the last failed attempt, 0 when not an HTTP failure.
  int status() const { return status_; }

 private:
  int status_;
};

}  // namespace simopt
