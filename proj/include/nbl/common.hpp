#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nbl {

// One column per token. Float on disk, double everywhere math happens.
using ActivationMatrix = Eigen::MatrixXf;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using LayerIndex = std::uint32_t;

// Precondition or shape violations. Maps to CLI exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed NBLA dumps or model files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failures (non-convergence, degenerate covariance).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Regularization shared by whitening, LMMSE solves and direct NMSE.
//   ridge_rel: C_XX += ridge_rel * (trace / dim) * I before any inversion.
//   floor_rel: eigenvalues below floor_rel * lambda_max are raised to it
//              inside inverse square roots.
struct Regularization {
  double ridge_rel = 1e-8;
  double floor_rel = 1e-10;
};

}  // namespace nbl
