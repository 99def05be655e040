#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace roiattn {

inline constexpr const char* kVersion = "0.1.0";

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Bad inputs, bad configs, malformed files. The CLI maps this to exit code 1;
// anything else escaping to main is a runtime failure (exit 2).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace roiattn
