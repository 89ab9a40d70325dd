#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// A grid of matrices (or vectors), one sample per time node (steps+1 entries).
using MatrixGrid = std::vector<Matrix>;
using VectorGrid = std::vector<Vector>;

// Error taxonomy. Each class maps to a distinct process exit code in the CLI:
// structural/argument problems -> 2, solver non-convergence -> 3,
// internal invariant breaches -> 4.
class StructuralError : public std::runtime_error {
 public:
  explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

class ArgumentError : public std::runtime_error {
 public:
  explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& msg, std::vector<double> history)
      : std::runtime_error(msg), ratio_history(std::move(history)) {}
  // Successive-difference ratios (or norms) observed before giving up.
  std::vector<double> ratio_history;
};

class InvariantError : public std::runtime_error {
 public:
  explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

// Least-squares realization of a conditional expectation failed (degenerate
// normal equations even after ridge). Treated like solver failure (exit 3).
class RegressionError : public std::runtime_error {
 public:
  explicit RegressionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Uniform time grid on [0, T].
struct TimeGrid {
  double T = 1.0;
  std::size_t steps = 100;

  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t n_steps) : T(horizon), steps(n_steps) {
    if (!(T > 0.0)) throw ArgumentError("TimeGrid: horizon must be positive");
    if (steps < 2) throw ArgumentError("TimeGrid: need at least 2 steps");
  }

  double dt() const { return T / static_cast<double>(steps); }
  std::size_t nodes() const { return steps + 1; }
  double t(std::size_t k) const { return dt() * static_cast<double>(k); }
};

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  return es.eigenvalues().maxCoeff();
}

// Spectral norm for symmetric arguments; used for iteration stopping rules.
inline double spectral_norm_sym(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace mfg
