#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "mfglab/model.hpp"
#include "mfglab/types.hpp"

namespace mfg {

// Batched argument bundle for the coupled system at one time node. Columns
// index Monte-Carlo paths. The conditional-expectation slots carry the
// regression-model predictions of E[. | F^W_t]; EX is the cross-path mean
// standing in for E[X(t)].
struct ThetaBatch {
  Matrix X;     // n x P
  Vector EX;    // n
  Matrix Y;     // n x P
  Matrix EYc;   // n x P, E[Y | F^W]
  Matrix Z;     // n x P
  Matrix EZc;   // n x P
  Matrix Zt;    // n x P
  Matrix EZtc;  // n x P
};

// Mean-field FBSDE
//   dX = b(t, Theta) dt + sigma(t, Theta) dW + sigmat(t, Theta) dWt,
//   dY = -f(t, Theta) dt + Z dW + Zt dWt,  Y(T) = g(X(T), E[X(T)]),
// with Theta = (X, E[X], Y, E[Y|F^W], Z, E[Z|F^W], Zt, E[Zt|F^W]).
// Evaluators act on whole path batches (n x P matrices) for speed.
struct MFFBSDEProblem {
  std::size_t n = 1;  // state/adjoint dimension
  std::size_t m = 1;  // control dimension (meaningful when control_map set)
  std::size_t d = 1;  // driving Brownian dimension (solver supports d = 1)
  Vector x0;

  using Coefficient = std::function<Matrix(double, const ThetaBatch&)>;
  using Terminal = std::function<Matrix(const Matrix&, const Vector&)>;

  Coefficient drift;         // b
  Coefficient diffusion_w;   // sigma
  Coefficient diffusion_wt;  // sigmat
  Coefficient driver;        // f
  Terminal terminal;         // g

  // Optional control extractors (node index, t, Theta) -> m x P used by the
  // assembled consistency system: `control_map` is the admissible
  // (projected) control, `candidate_map` the pre-projection candidate.
  using ControlMap =
      std::function<Matrix(std::size_t, double, const ThetaBatch&)>;
  ControlMap control_map;
  ControlMap candidate_map;

  // Known Lipschitz/monotonicity metadata; informational only.
  std::vector<double> rho, mu, w, kappa;
  std::optional<double> lambda1, lambda2;
};

// Linear predictor on a fixed feature basis; coefficients live on the raw
// feature scale, so blending model coefficients blends the predictions.
struct RegressionModel {
  Matrix coef;  // n_out x q
  bool zero = true;

  Matrix predict(const Matrix& features) const {
    if (zero)
      return Matrix::Zero(coef.rows() == 0 ? 0 : coef.rows(),
                          features.cols());
    return coef * features;
  }
};

// Least-squares fit of values (n_out x P) on features (q x P) with absolute
// ridge on the standardized Gram matrix. Degenerate (near-constant) feature
// rows other than the intercept are excluded and get coefficient zero.
// Requires P >= 10 q; throws RegressionError when the normal equations stay
// rank-deficient after the ridge.
RegressionModel regress_conditional(const Matrix& values,
                                    const Matrix& features, double ridge);

// Frozen Brownian increments shared by every Picard iteration, plus the
// running W sums used as regression features.
struct NoisePaths {
  std::vector<Vector> dW;    // [step], P entries
  std::vector<Vector> dWt;   // [step], P entries
  std::vector<Vector> Wcum;  // [node], running sum of dW, P entries
  double dt = 0.0;
};

NoisePaths generate_noise(const TimeGrid& grid, std::size_t n_paths,
                          std::uint64_t seed);

// Solver iterate: path panels per node plus the per-node conditional models
// on the observation basis {1, W, W^2, filter-proxy components}.
struct FBSDEState {
  std::size_t n_paths = 0;
  double lambda_weight = 0.0;
  std::vector<Matrix> X, Y, Z, Zt;  // [node], n x P
  VectorGrid EX;                    // [node]
  std::vector<Matrix> Xhat;         // [node], filter-proxy feature paths
  std::vector<Matrix> U, U_raw;     // [node], m x P (control_map runs only)
  std::vector<RegressionModel> modelY, modelZ, modelZt;  // [node]
  std::vector<double> diffY_history, diffZ_history, diffZt_history;
  std::vector<double> diff_history;   // combined successive-difference norms
  std::vector<double> ratio_history;  // diff_k / diff_{k-1}
  std::size_t iterations = 0;
};

struct ContractionDiagnostics {
  double lambda_bar1 = 0.0;  // reserved: proof-side exponents, not derivable
  double lambda_bar2 = 0.0;  //   numerically; kept for report compatibility
  double C1 = 0.0, C2 = 0.0, C3 = 0.0;
  double K1 = 0.0, K2 = 0.0, K3 = 0.0;
  double observed_ratio = 0.0;  // last ratio of successive difference norms
  std::optional<double> theorem_ratio_bound;  // unset: no computable bound
};

struct PicardOptions {
  double lambda = 0.0;       // weight of the discounted iteration norm
  double tol = 1e-6;
  std::size_t max_iter = 50;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 0;
  double ridge = 1e-8;
  std::size_t basis_degree = 2;  // 1 drops the squared features
  // Damped fixed-point update: model coefficients move a fraction
  // `relaxation` toward each new fit (1.0 = undamped iteration). Strong
  // coupling needs small values; see the solver notes in the README.
  double relaxation = 1.0;
  bool record_controls = true;
};

struct ForwardPaths {
  std::vector<Matrix> X;     // [node], n x P
  VectorGrid EX;             // [node]
  std::vector<Matrix> Xhat;  // [node], filter proxy (W-driven Euler image)
  std::vector<Matrix> U, U_raw;  // [node], m x P when recorded
};

// Euler-Maruyama forward sweep. (Y, Z, Zt) path slots and the conditional
// models are taken from `prev`; an empty/zero `prev` is the canonical
// iteration-0 start.
ForwardPaths solve_forward(const MFFBSDEProblem& problem, const TimeGrid& grid,
                           const FBSDEState& prev, const NoisePaths& noise,
                           bool record_controls = false);

struct BackwardPaths {
  std::vector<Matrix> Y, Z, Zt;  // [node], n x P
  std::vector<RegressionModel> modelY, modelZ, modelZt;  // [node], obs basis
};

// Least-squares Monte-Carlo backward recursion through the driver, with
// Z/Zt extracted by covariation regression against the frozen increments.
BackwardPaths solve_backward(const MFFBSDEProblem& problem,
                             const TimeGrid& grid, const ForwardPaths& fwd,
                             const NoisePaths& noise, double ridge,
                             std::size_t basis_degree);

// Discounted squared path norm E int_0^T e^{-lambda s} |u(s)|^2 ds by
// trapezoidal quadrature and cross-path mean (returns the squared value).
double weighted_norm(const std::vector<Matrix>& paths, double lambda,
                     double dt);

// Damped Picard iteration on the composed forward/backward mapping,
// starting from zero. Stops when the lambda-weighted norm of the successive
// difference (squared norms of dY, dZ, dZt summed, then a square root)
// drops below tol; throws NonConvergenceError with the ratio history when
// max_iter is exhausted.
std::pair<FBSDEState, ContractionDiagnostics> picard_solve(
    const MFFBSDEProblem& problem, const TimeGrid& grid,
    const PicardOptions& opts);

// Positional convenience overload mirroring the operation contract.
std::pair<FBSDEState, ContractionDiagnostics> picard_solve(
    const MFFBSDEProblem& problem, const TimeGrid& grid, double lambda,
    double tol, std::size_t max_iter, std::size_t n_paths,
    std::uint64_t seed);

// The projected consistency system for the partially observed LQ game as an
// MFFBSDEProblem instance: (X, Y, Z, Zt) realize (zbar, pbar, kbar, ktilde)
// and the control map applies the gamma-projection after the conditional
// expectation regressors.
MFFBSDEProblem assemble_cc_system(const CoefficientSet& coeffs,
                                  const TimeGrid& grid,
                                  const ConstraintSet& gamma);

}  // namespace mfg
