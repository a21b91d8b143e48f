#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace panda {

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when an iterative fit exhausts its iteration budget; carries the last iterate.
struct FitDivergence : NumericalError {
  Eigen::VectorXd last_iterate;
  FitDivergence(const std::string& msg, Eigen::VectorXd last)
      : NumericalError(msg), last_iterate(std::move(last)) {}
};

inline constexpr double kThetaFloor = 1e-8;  // |θ| floor before inverting
inline constexpr double kVarCap = 1e12;      // ceiling on any noise variance

}  // namespace panda
