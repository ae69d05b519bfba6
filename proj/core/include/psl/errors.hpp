#pragma once

#include <stdexcept>
#include <string>

namespace psl {

struct PslError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SizeUnderflow : PslError {
  using PslError::PslError;
};
struct EmptyDataset : PslError {
  using PslError::PslError;
};
struct InvalidMatrix : PslError {
  using PslError::PslError;
};
struct BudgetExceedsData : PslError {
  using PslError::PslError;
};
struct ZeroAllocation : PslError {
  using PslError::PslError;
};
struct ZeroRate : PslError {
  using PslError::PslError;
};
struct MissingParam : PslError {
  using PslError::PslError;
};
struct StepSizeViolation : PslError {
  using PslError::PslError;
};
struct DegeneratePoint : PslError {
  using PslError::PslError;
};
struct Infeasible : PslError {
  using PslError::PslError;
};
struct IterLimit : PslError {
  using PslError::PslError;
};
struct InfeasibleSeed : PslError {
  using PslError::PslError;
};
struct Diverged : PslError {
  using PslError::PslError;
};
struct PlanPhaseOverrun : PslError {
  using PslError::PslError;
};
struct ConfigError : PslError {
  using PslError::PslError;
};

}  // namespace psl
