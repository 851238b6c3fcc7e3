#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace prodg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy shared by every module. The CLI maps these onto exit codes.

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidState : std::logic_error {
  using std::logic_error::logic_error;
};

struct InvalidConfiguration : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackendError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a loss or parameter turns non-finite during training.
struct NumericalFailure : std::runtime_error {
  NumericalFailure(const std::string& what, std::int64_t step, std::string last_checkpoint)
      : std::runtime_error(what), step(step), last_checkpoint(std::move(last_checkpoint)) {}
  std::int64_t step;
  std::string last_checkpoint;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace prodg
