#pragma once

#include <stdexcept>
#include <string>

namespace tir {

// Raised when a simulation horizon cannot fit a full two-week window.
struct WindowTooShortError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a feature window contains no present readings.
struct UndefinedFeatureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised for range fractions that violate very_low <= low or very_high <= high.
struct InconsistentInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when an action class is not part of the discrete action set.
struct UnknownActionError : std::domain_error {
  using std::domain_error::domain_error;
};

// Raised when a class has too few rows to fit a model.
struct InsufficientSupportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when an assignment treats more patients than the capacity allows.
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised on invalid run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a pipeline stage fails; carries the stage name.
struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_name(stage) {}
  std::string stage_name;
};

}  // namespace tir
