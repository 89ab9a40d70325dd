#pragma once

#include <cstddef>
#include <functional>
#include <utility>

#include "mfglab/model.hpp"
#include "mfglab/types.hpp"

namespace mfg {

// Solution of the consistency-condition system of backward matrix equations:
//   P:      nonlinear matrix equation with terminal G
//   Lambda: companion equation with terminal -G, produced via Pi = P + Lambda
//   Pi:     well-posed transformed equation with PSD source, terminal 0
//   Phi:    linear vector offset equation, terminal 0
//   l:      forward ODE for the limiting population average, l(0) = x0
struct RiccatiSolution {
  MatrixGrid P;
  MatrixGrid Lambda;
  MatrixGrid Pi;
  VectorGrid Phi;
  VectorGrid l;
  MatrixGrid Rtilde;  // R + D^T P D + Dt^T P Dt, SPD at every node
  MatrixGrid Ptilde;  // P B + C^T P D, n x m
  std::size_t iteration_count = 0;

  struct Residuals {
    double P = 0.0;
    double Lambda = 0.0;
    double Phi = 0.0;
    double l = 0.0;
  } residuals;
};

struct RiccatiOptions {
  enum class PMethod { Direct, Iterative };
  PMethod p_method = PMethod::Direct;
  double iter_tol = 1e-10;
  std::size_t max_iter = 200;
  bool check_invariants = true;
};

// Backward RK4 integration of the linear matrix equation
//   Pdot + P*Ahat + Ahat^T*P + Chat^T*P*Chat + Qhat = 0,  P(T) = terminal,
// with symmetrization each step. Stage evaluations sample the coefficients
// at the correct stage times: the two middle RK4 stages use the per-cell
// midpoint grids (size grid.steps), so time-varying coefficients keep the
// integrator at full order.
MatrixGrid integrate_lyapunov(const MatrixGrid& Ahat, const MatrixGrid& Chat,
                              const MatrixGrid& Qhat, const MatrixGrid& Amid,
                              const MatrixGrid& Cmid, const MatrixGrid& Qmid,
                              const Matrix& terminal, const TimeGrid& grid);

// Convenience overload: midpoint samples taken as nodal averages. Exact for
// constant-in-time coefficients; second order otherwise.
MatrixGrid integrate_lyapunov(const MatrixGrid& Ahat, const MatrixGrid& Chat,
                              const MatrixGrid& Qhat, const Matrix& terminal,
                              const TimeGrid& grid);

// Monotone fixed-point scheme for the P equation: repeatedly linearize with
// the feedback gain of the previous iterate and solve the resulting linear
// equation. Returns the converged grid and the iteration count.
std::pair<MatrixGrid, std::size_t> solve_P_iterative(
    const CoefficientSet& coeffs, const TimeGrid& grid, double tol = 1e-10,
    std::size_t max_iter = 200);

// Direct backward RK4 integration of the nonlinear P equation.
MatrixGrid solve_P_direct(const CoefficientSet& coeffs, const TimeGrid& grid);

// Transformed companion equation (terminal 0, PSD source); requires P.
MatrixGrid solve_Pi(const CoefficientSet& coeffs, const TimeGrid& grid,
                    const MatrixGrid& P);

// Linear offset equation (terminal 0); requires P and Lambda.
VectorGrid solve_Phi(const CoefficientSet& coeffs, const TimeGrid& grid,
                     const MatrixGrid& P, const MatrixGrid& Lambda);

// Forward ODE for the limiting average; requires P, Lambda, Phi.
VectorGrid solve_l(const CoefficientSet& coeffs, const TimeGrid& grid,
                   const MatrixGrid& P, const MatrixGrid& Lambda,
                   const VectorGrid& Phi);

// Scalar closed form available when C = D = Dt = 0.
struct ScalarClosedForm {
  double theta = 0.0;
  double k_ratio = 0.0;
  std::function<double(double)> P_of_t;
};

// Closed-form scalar solution parameterized by the intrinsic drift gap
// (A - a), control gain B, state weight eps, control weight r and terminal
// weight c on horizon T.
ScalarClosedForm closed_form_scalar_P(double A, double a, double B, double eps,
                                      double r, double c, double T);

// Finite-difference residuals: max over stencil-interior nodes of the norm of
// each equation's left-hand side with d/dt replaced by a high-order central
// difference. Small residuals certify the grids solve their equations.
double residual_P(const MatrixGrid& P, const CoefficientSet& coeffs,
                  const TimeGrid& grid);
double residual_Lambda(const MatrixGrid& Lambda, const MatrixGrid& P,
                       const CoefficientSet& coeffs, const TimeGrid& grid);
double residual_Phi(const VectorGrid& Phi, const MatrixGrid& P,
                    const MatrixGrid& Lambda, const CoefficientSet& coeffs,
                    const TimeGrid& grid);
double residual_l(const VectorGrid& l, const MatrixGrid& P,
                  const MatrixGrid& Lambda, const VectorGrid& Phi,
                  const CoefficientSet& coeffs, const TimeGrid& grid);

// End-to-end solve: P (direct or iterative), Pi, Lambda = Pi - P, Phi, l,
// plus Rtilde/Ptilde grids, residuals, and invariant checks.
RiccatiSolution solve_riccati(const CoefficientSet& coeffs,
                              const TimeGrid& grid,
                              const RiccatiOptions& opts = {});

}  // namespace mfg
