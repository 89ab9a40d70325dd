#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfglab/types.hpp"

namespace mfg {

// Control-constraint set Gamma. The projection is taken in the R-weighted
// norm, which is what makes the projected feedback law optimal.
struct ConstraintSet {
  enum class Kind { FullSpace, NonnegativeOrthant, Box };

  Kind kind = Kind::FullSpace;
  Vector lower;  // Box only
  Vector upper;  // Box only

  static ConstraintSet full_space() { return {}; }
  static ConstraintSet nonnegative_orthant() {
    ConstraintSet c;
    c.kind = Kind::NonnegativeOrthant;
    return c;
  }
  static ConstraintSet box(Vector lo, Vector up);

  bool contains(const Vector& v, double tol = 0.0) const;
};

// Time-sampled model coefficients. Grids hold one sample per node
// (steps + 1 entries); values are piecewise-constant between nodes.
//
// State dynamics of one agent (population average enters through F):
//   dx = [A x + B u + F xbar + b] dt + [C x + D u + H xbar + sigma] dW
//        + [Ct x + Dt u + Ht xbar + sigmat] dWt,
// with W the observed and Wt the unobserved Brownian motion. The quadratic
// cost weighs (x - xbar) by Q, u by R, and the terminal gap by G.
struct CoefficientSet {
  std::size_t n = 1;  // state dimension
  std::size_t m = 1;  // control dimension

  MatrixGrid A, C, Ct, F, H, Ht;  // n x n per node
  MatrixGrid B, D, Dt;            // n x m per node
  VectorGrid b, sigma, sigmat;    // n per node
  MatrixGrid Q;                   // n x n per node
  MatrixGrid R;                   // m x m per node
  Matrix G;                       // n x n, constant
  Vector x0;                      // n
  double delta = 0.0;  // scalar such that F = delta * I under the mean-field structure flag
  double kappa = 1e-8;  // strict lower bound certified for eigmin(R)

  // Constant-coefficient builder: replicates each sample across the grid.
  static CoefficientSet constant(const TimeGrid& grid, const Matrix& A,
                                 const Matrix& B, const Matrix& C,
                                 const Matrix& D, const Matrix& Dt,
                                 const Matrix& F, const Vector& b,
                                 const Vector& sigma, const Vector& sigmat,
                                 const Matrix& Q, const Matrix& R,
                                 const Matrix& G, const Vector& x0,
                                 double delta);

  // Scalar convenience builder used by the built-in example and many tests.
  static CoefficientSet scalar(const TimeGrid& grid, double A, double B,
                               double C, double D, double Dt, double delta,
                               double b, double sigma, double sigmat, double Q,
                               double R, double G, double x0);

  // Built-in inter-bank borrowing/lending example configuration
  // (systemic-risk flavored scalar model). dtilde is exposed because the
  // directional experiment re-runs the model at several values of it.
  static CoefficientSet ibl_preset(const TimeGrid& grid, double dtilde = 2.0);

  std::size_t nodes() const { return A.size(); }
};

struct ValidationReport {
  bool h1_ok = false;  // coefficient boundedness / finiteness
  bool h2_ok = false;  // cost positivity: Q, G PSD and R uniformly positive
  bool h3_ok = false;  // mean-field structure: F = delta*I, H = Ht = Ct = 0
  double lambda_star = 0.0;  // max eigenvalue of (A + A^T)/2 over the grid
  // Sufficient well-posedness inequality (advisory only; never blocks
  // downstream solvers).
  bool theorem33_ok = false;
  std::vector<std::string> messages;
};

// Checks the standing assumptions and evaluates the advisory sufficient
// condition 4*lambda_star < -2|F| - 6|C|^2 - 6|Ct|^2 - 5|H|^2 - 5|Ht|^2
// with grid-sup Frobenius norms.
ValidationReport validate(const CoefficientSet& coeffs, const TimeGrid& grid);

// Projection of v onto gamma in the R_t-weighted norm. Exact clamping when
// R_t is diagonal on orthant/box; projected coordinate descent (tolerance
// 1e-10) for non-diagonal R_t. FullSpace returns v unchanged.
Vector project(const ConstraintSet& gamma, const Matrix& R_t, const Vector& v);

}  // namespace mfg
