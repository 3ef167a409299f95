#pragma once

#include <stdexcept>
#include <string>

namespace dstrack {

/// Malformed input: dimension mismatch, non-finite value, bad index.
class InputError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// A modelling precondition (convexity, factor range, bound signs) does not hold.
class AssumptionError : public InputError
{
public:
  using InputError::InputError;
};

/// A receding-horizon subproblem has no feasible point.
class InfeasibleError : public std::runtime_error
{
public:
  InfeasibleError(const std::string & what, int step) : std::runtime_error(what), step_(step) {}

  /// 1-based time step at which the failure occurred (0 when unknown).
  int step() const noexcept { return step_; }

private:
  int step_;
};

/// The initial state of a receding-horizon window already violates the state box.
class RootInfeasibleError : public InfeasibleError
{
public:
  using InfeasibleError::InfeasibleError;
};

}  // namespace dstrack
