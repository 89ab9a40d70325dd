#include "mfglab/fbsde.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <sstream>

#include "mfglab/parallel.hpp"
#include "mfglab/rng.hpp"

namespace mfg {

namespace {

constexpr double kDegenerateSd = 1e-12;

void check_finite_panel(const Matrix& m, std::size_t node, const char* what) {
  if (!m.allFinite()) {
    std::ostringstream os;
    os << what << " produced non-finite values at node " << node;
    throw NonConvergenceError(os.str(), {});
  }
}

}  // namespace

RegressionModel regress_conditional(const Matrix& values,
                                    const Matrix& features, double ridge) {
  const Eigen::Index P = features.cols();
  const Eigen::Index q = features.rows();
  if (values.cols() != P)
    throw StructuralError("regress_conditional: value/feature path mismatch");
  if (q < 1) throw ArgumentError("regress_conditional: empty basis");
  if (P < 10 * q)
    throw ArgumentError(
        "regress_conditional: need at least 10 paths per basis function");
  if (!(ridge >= 0.0))
    throw ArgumentError("regress_conditional: ridge must be >= 0");

  // Row 0 is the intercept by convention. Other rows are z-scored; rows with
  // (numerically) zero spread are excluded and get coefficient zero, which
  // keeps early-time nodes (where W == 0 on every path) well posed.
  Vector mean(q), sd(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    mean(j) = features.row(j).mean();
    sd(j) = std::sqrt(
        (features.row(j).array() - mean(j)).square().sum() /
        static_cast<double>(P));
  }
  std::vector<Eigen::Index> active;
  active.push_back(0);
  for (Eigen::Index j = 1; j < q; ++j)
    if (sd(j) > kDegenerateSd * std::max(1.0, std::abs(mean(j))))
      active.push_back(j);

  const auto qa = static_cast<Eigen::Index>(active.size());
  Matrix phi(qa, P);
  phi.row(0) = features.row(0);
  for (Eigen::Index idx = 1; idx < qa; ++idx) {
    const Eigen::Index j = active[static_cast<std::size_t>(idx)];
    phi.row(idx) = (features.row(j).array() - mean(j)) / sd(j);
  }

  Matrix gram = phi * phi.transpose();
  gram += ridge * Matrix::Identity(qa, qa);
  const Matrix rhs = phi * values.transpose();  // qa x n_out

  Eigen::LLT<Matrix> llt(gram);
  Matrix coef_std;
  if (llt.info() == Eigen::Success) {
    coef_std = llt.solve(rhs);
  } else {
    Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success)
      throw RegressionError(
          "regress_conditional: normal equations degenerate after ridge");
    coef_std = ldlt.solve(rhs);
  }
  if (!coef_std.allFinite())
    throw RegressionError(
        "regress_conditional: non-finite regression coefficients");

  // Map back to the raw feature scale so predictions (and coefficient
  // blending) need no stored statistics.
  RegressionModel model;
  model.zero = false;
  model.coef = Matrix::Zero(values.rows(), q);
  Vector intercept = coef_std.row(0).transpose();
  for (Eigen::Index idx = 1; idx < qa; ++idx) {
    const Eigen::Index j = active[static_cast<std::size_t>(idx)];
    model.coef.col(j) = coef_std.row(idx).transpose() / sd(j);
    intercept -= coef_std.row(idx).transpose() * (mean(j) / sd(j));
  }
  model.coef.col(0) = intercept;
  return model;
}

NoisePaths generate_noise(const TimeGrid& grid, std::size_t n_paths,
                          std::uint64_t seed) {
  if (n_paths < 1) throw ArgumentError("generate_noise: need paths >= 1");
  NoisePaths noise;
  noise.dt = grid.dt();
  noise.dW.assign(grid.steps, Vector(n_paths));
  noise.dWt.assign(grid.steps, Vector(n_paths));
  noise.Wcum.assign(grid.nodes(), Vector::Zero(n_paths));

  parallel_for(n_paths, [&](std::size_t p) {
    for (std::size_t k = 0; k < grid.steps; ++k) {
      NoiseKey key;
      key.seed = seed;
      key.path = p;
      key.step = k;
      key.purpose = NoisePurpose::kObservable;
      noise.dW[k](static_cast<Eigen::Index>(p)) =
          brownian_increment(key, noise.dt);
      key.purpose = NoisePurpose::kUnobservable;
      noise.dWt[k](static_cast<Eigen::Index>(p)) =
          brownian_increment(key, noise.dt);
    }
  });
  for (std::size_t k = 0; k < grid.steps; ++k)
    noise.Wcum[k + 1] = noise.Wcum[k] + noise.dW[k];
  return noise;
}

namespace {

// Observation-filtration basis at a node: {1, W, W^2 (degree 2), filter
// proxy components}.
Matrix obs_features(const NoisePaths& noise, const Matrix& xhat,
                    std::size_t k, std::size_t degree) {
  const Eigen::Index P = xhat.cols();
  const Eigen::Index n = xhat.rows();
  const Eigen::Index q = 1 + 1 + (degree >= 2 ? 1 : 0) + n;
  Matrix F(q, P);
  F.row(0).setOnes();
  F.row(1) = noise.Wcum[k].transpose();
  Eigen::Index r = 2;
  if (degree >= 2) {
    F.row(2) = noise.Wcum[k].array().square().matrix().transpose();
    r = 3;
  }
  F.middleRows(r, n) = xhat;
  return F;
}

// Full-information basis for the backward recursion: {1, X, X^2 (degree 2),
// filter proxy components}.
Matrix full_features(const Matrix& x, const Matrix& xhat, std::size_t degree) {
  const Eigen::Index P = x.cols();
  const Eigen::Index n = x.rows();
  const Eigen::Index q = 1 + n + (degree >= 2 ? n : 0) + n;
  Matrix F(q, P);
  F.row(0).setOnes();
  F.middleRows(1, n) = x;
  Eigen::Index r = 1 + n;
  if (degree >= 2) {
    F.middleRows(r, n) = x.array().square().matrix();
    r += n;
  }
  F.middleRows(r, n) = xhat;
  return F;
}

std::size_t infer_obs_degree(const RegressionModel& model, std::size_t n) {
  // q = 2 + n for degree 1, q = 3 + n for degree >= 2.
  const auto q = static_cast<std::size_t>(model.coef.cols());
  return q == 2 + n ? 1 : 2;
}

void check_problem(const MFFBSDEProblem& problem) {
  if (problem.d != 1)
    throw ArgumentError(
        "fbsde solver: only scalar driving Brownian motions are supported");
  if (problem.n < 1 || static_cast<std::size_t>(problem.x0.size()) != problem.n)
    throw StructuralError("fbsde problem: x0 inconsistent with dimension n");
  if (!problem.drift || !problem.diffusion_w || !problem.diffusion_wt)
    throw StructuralError("fbsde problem: missing forward evaluators");
}

}  // namespace

ForwardPaths solve_forward(const MFFBSDEProblem& problem, const TimeGrid& grid,
                           const FBSDEState& prev, const NoisePaths& noise,
                           bool record_controls) {
  check_problem(problem);
  if (noise.dW.size() != grid.steps || noise.Wcum.size() != grid.nodes())
    throw StructuralError("solve_forward: noise grid misaligned");
  const auto P = static_cast<Eigen::Index>(noise.dW[0].size());
  const auto n = static_cast<Eigen::Index>(problem.n);
  const std::size_t nodes = grid.nodes();
  const double dt = grid.dt();
  const bool have_models = !prev.modelY.empty();
  const bool have_paths = !prev.Y.empty();
  if (have_models && prev.modelY.size() != nodes)
    throw StructuralError("solve_forward: model grid misaligned");
  if (have_paths && prev.Y.size() != nodes)
    throw StructuralError("solve_forward: (Y,Z,Zt) path grid misaligned");
  const std::size_t degree =
      have_models && !prev.modelY[0].zero
          ? infer_obs_degree(prev.modelY[0], problem.n)
          : 2;

  ForwardPaths fp;
  fp.X.assign(nodes, Matrix());
  fp.Xhat.assign(nodes, Matrix());
  fp.EX.assign(nodes, Vector());
  const bool record = record_controls && static_cast<bool>(problem.control_map);
  if (record) {
    fp.U.assign(nodes, Matrix());
    fp.U_raw.assign(nodes, Matrix());
  }

  fp.X[0] = problem.x0.replicate(1, P);
  fp.Xhat[0] = fp.X[0];
  const Matrix zero_panel = Matrix::Zero(n, P);

  for (std::size_t k = 0; k < nodes; ++k) {
    fp.EX[k] = fp.X[k].rowwise().mean();
    const double t = grid.t(k);

    ThetaBatch th;
    th.X = fp.X[k];
    th.EX = fp.EX[k];
    th.Y = have_paths ? prev.Y[k] : zero_panel;
    th.Z = have_paths ? prev.Z[k] : zero_panel;
    th.Zt = have_paths ? prev.Zt[k] : zero_panel;
    if (have_models && !prev.modelY[k].zero) {
      const Matrix F = obs_features(noise, fp.Xhat[k], k, degree);
      th.EYc = prev.modelY[k].predict(F);
      th.EZc = prev.modelZ[k].predict(F);
      th.EZtc = prev.modelZt[k].predict(F);
    } else {
      th.EYc = zero_panel;
      th.EZc = zero_panel;
      th.EZtc = zero_panel;
    }

    if (record) {
      fp.U[k] = problem.control_map(k, t, th);
      fp.U_raw[k] =
          problem.candidate_map ? problem.candidate_map(k, t, th) : fp.U[k];
    }
    if (k == grid.steps) break;

    const Matrix b = problem.drift(t, th);
    const Matrix sw = problem.diffusion_w(t, th);
    const Matrix swt = problem.diffusion_wt(t, th);
    check_finite_panel(b, k, "forward drift evaluator");
    check_finite_panel(sw, k, "forward W-diffusion evaluator");
    check_finite_panel(swt, k, "forward Wt-diffusion evaluator");
    fp.X[k + 1] = fp.X[k] + dt * b + sw * noise.dW[k].asDiagonal() +
                  swt * noise.dWt[k].asDiagonal();
    check_finite_panel(fp.X[k + 1], k + 1, "forward state");

    // Filter proxy: the same drift and observable diffusion evaluated along
    // the proxy itself, with the unobservable noise dropped. All regression
    // features measurable w.r.t. the observation filtration come from here.
    // th is done serving the state step, so only its X panel is swapped.
    th.X = fp.Xhat[k];
    const Matrix bh = problem.drift(t, th);
    const Matrix swh = problem.diffusion_w(t, th);
    fp.Xhat[k + 1] = fp.Xhat[k] + dt * bh + swh * noise.dW[k].asDiagonal();
    check_finite_panel(fp.Xhat[k + 1], k + 1, "filter proxy");
  }
  return fp;
}

BackwardPaths solve_backward(const MFFBSDEProblem& problem,
                             const TimeGrid& grid, const ForwardPaths& fwd,
                             const NoisePaths& noise, double ridge,
                             std::size_t basis_degree) {
  check_problem(problem);
  if (!problem.driver || !problem.terminal)
    throw StructuralError("solve_backward: missing driver or terminal map");
  const std::size_t nodes = grid.nodes();
  if (fwd.X.size() != nodes || fwd.Xhat.size() != nodes ||
      fwd.EX.size() != nodes)
    throw StructuralError("solve_backward: forward paths misaligned");
  const double dt = grid.dt();

  BackwardPaths bp;
  bp.Y.assign(nodes, Matrix());
  bp.Z.assign(nodes, Matrix());
  bp.Zt.assign(nodes, Matrix());
  bp.modelY.resize(nodes);
  bp.modelZ.resize(nodes);
  bp.modelZt.resize(nodes);

  bp.Y[grid.steps] = problem.terminal(fwd.X[grid.steps], fwd.EX[grid.steps]);
  check_finite_panel(bp.Y[grid.steps], grid.steps, "terminal map");

  // Accuracy notes for the recursion below. The covariation estimators
  // recover *cell averages* of the martingale integrands, i.e. midpoint
  // values to second order; nodal (Z, Zt) come from linear extrapolation
  // across the neighbouring cell. The driver integral uses the trapezoidal
  // rule with one corrector pass for its implicit half. Both refinements
  // matter: the control map downstream is a near-cancellation of large
  // opposing terms, which amplifies any first-order bias of the recursion
  // far above the usual discretization level.
  Matrix rawZ_next, rawZt_next;          // cell averages of the cell above
  Matrix EYc_next, EZc_next, EZtc_next;  // obs-model predictions at node k+1

  for (std::size_t k = grid.steps; k-- > 0;) {
    const Matrix Ffull = full_features(fwd.X[k], fwd.Xhat[k], basis_degree);
    const Matrix Ey =
        regress_conditional(bp.Y[k + 1], Ffull, ridge).predict(Ffull);

    // Variance-reduced covariation estimators for the martingale integrands;
    // the deviation must stay a pure martingale increment (no driver terms),
    // otherwise the extracted integrands pick up a first-order bias. The two
    // integrands share the feature matrix, so one stacked fit factors the
    // normal equations once.
    const Matrix dev = bp.Y[k + 1] - Ey;
    const Eigen::Index nr = dev.rows();
    Matrix tgt(2 * nr, dev.cols());
    tgt.topRows(nr) = dev * (noise.dW[k] / dt).asDiagonal();
    tgt.bottomRows(nr) = dev * (noise.dWt[k] / dt).asDiagonal();
    const Matrix rawBoth =
        regress_conditional(tgt, Ffull, ridge).predict(Ffull);
    const Matrix rawZ = rawBoth.topRows(nr);
    const Matrix rawZt = rawBoth.bottomRows(nr);
    const bool interior = rawZ_next.size() > 0;  // a cell above exists
    bp.Z[k] = interior ? Matrix(1.5 * rawZ - 0.5 * rawZ_next) : rawZ;
    bp.Zt[k] = interior ? Matrix(1.5 * rawZt - 0.5 * rawZt_next) : rawZt;

    // The three conditional projections onto the observation basis are one
    // stacked fit as well; the model rows split back into the per-quantity
    // regressors afterwards.
    const Matrix Fobs = obs_features(noise, fwd.Xhat[k], k, basis_degree);
    Matrix obs_tgt(3 * nr, dev.cols());
    obs_tgt.topRows(nr) = Ey;
    obs_tgt.middleRows(nr, nr) = bp.Z[k];
    obs_tgt.bottomRows(nr) = bp.Zt[k];
    const RegressionModel mObs = regress_conditional(obs_tgt, Fobs, ridge);
    bp.modelZ[k].zero = false;
    bp.modelZ[k].coef = mObs.coef.middleRows(nr, nr);
    bp.modelZt[k].zero = false;
    bp.modelZt[k].coef = mObs.coef.bottomRows(nr);
    const Matrix obs_pred = mObs.predict(Fobs);

    // Trapezoidal base: conditional expectation plus half of the driver at
    // the node above, evaluated pathwise (its martingale noise is orthogonal
    // to everything regressed later and averages out).
    Matrix base = Ey;
    if (interior) {
      ThetaBatch tn;
      tn.X = fwd.X[k + 1];
      tn.EX = fwd.EX[k + 1];
      tn.Y = bp.Y[k + 1];
      tn.Z = bp.Z[k + 1];
      tn.Zt = bp.Zt[k + 1];
      tn.EYc = EYc_next;
      tn.EZc = EZc_next;
      tn.EZtc = EZtc_next;
      const Matrix fn = problem.driver(grid.t(k + 1), tn);
      check_finite_panel(fn, k + 1, "driver evaluator");
      base += (0.5 * dt) * fn;
    }

    ThetaBatch th;
    th.X = fwd.X[k];
    th.EX = fwd.EX[k];
    th.EYc = obs_pred.topRows(nr);
    th.Z = bp.Z[k];
    th.EZc = obs_pred.middleRows(nr, nr);
    th.Zt = bp.Zt[k];
    th.EZtc = obs_pred.bottomRows(nr);
    const double w = interior ? 0.5 * dt : dt;
    th.Y = base;
    Matrix f = problem.driver(grid.t(k), th);
    check_finite_panel(f, k, "driver evaluator");
    if (interior) {
      // One corrector pass resolves the implicit half to the order needed.
      th.Y = base + w * f;
      f = problem.driver(grid.t(k), th);
      check_finite_panel(f, k, "driver evaluator");
    }
    bp.Y[k] = base + w * f;

    bp.modelY[k] = regress_conditional(bp.Y[k], Fobs, ridge);

    rawZ_next = rawZ;
    rawZt_next = rawZt;
    EYc_next = th.EYc;
    EZc_next = th.EZc;
    EZtc_next = th.EZtc;
  }

  // Martingale integrands have no recursion step at the horizon; carry the
  // last interior estimate so every node is populated.
  bp.Z[grid.steps] = bp.Z[grid.steps - 1];
  bp.Zt[grid.steps] = bp.Zt[grid.steps - 1];
  const Matrix FobsT =
      obs_features(noise, fwd.Xhat[grid.steps], grid.steps, basis_degree);
  bp.modelY[grid.steps] =
      regress_conditional(bp.Y[grid.steps], FobsT, ridge);
  bp.modelZ[grid.steps] =
      regress_conditional(bp.Z[grid.steps], FobsT, ridge);
  bp.modelZt[grid.steps] =
      regress_conditional(bp.Zt[grid.steps], FobsT, ridge);
  return bp;
}

double weighted_norm(const std::vector<Matrix>& paths, double lambda,
                     double dt) {
  if (paths.size() < 2) return 0.0;
  if (!std::isfinite(lambda))
    throw ArgumentError("weighted_norm: lambda must be finite");
  const std::size_t steps = paths.size() - 1;
  const auto P = static_cast<double>(paths[0].cols());
  double acc = 0.0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double w = (k == 0 || k == steps) ? 0.5 : 1.0;
    const double t = dt * static_cast<double>(k);
    acc += w * std::exp(-lambda * t) * (paths[k].squaredNorm() / P) * dt;
  }
  return acc;
}

namespace {

RegressionModel blend_model(const RegressionModel& old_model,
                            const RegressionModel& fit, double theta) {
  RegressionModel out;
  out.zero = false;
  if (old_model.zero) {
    // Zero-seeded start: the first update moves theta of the way from the
    // zero model, not all the way to the fit.
    out.coef = theta * fit.coef;
  } else {
    out.coef = (1.0 - theta) * old_model.coef + theta * fit.coef;
  }
  return out;
}

std::vector<Matrix> panel_difference(const std::vector<Matrix>& a,
                                     const std::vector<Matrix>& b) {
  std::vector<Matrix> d(a.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    d[k] = b.empty() ? a[k] : (a[k] - b[k]).eval();
  return d;
}

}  // namespace

std::pair<FBSDEState, ContractionDiagnostics> picard_solve(
    const MFFBSDEProblem& problem, const TimeGrid& grid,
    const PicardOptions& opts) {
  check_problem(problem);
  if (!problem.driver || !problem.terminal)
    throw StructuralError("picard_solve: missing driver or terminal map");
  if (!(opts.tol > 0.0)) throw ArgumentError("picard_solve: tol must be > 0");
  if (!(opts.relaxation > 0.0 && opts.relaxation <= 1.0))
    throw ArgumentError("picard_solve: relaxation must lie in (0, 1]");
  if (opts.basis_degree < 1 || opts.basis_degree > 2)
    throw ArgumentError("picard_solve: basis degree must be 1 or 2");

  const NoisePaths noise = generate_noise(grid, opts.n_paths, opts.seed);
  const std::size_t nodes = grid.nodes();
  const double dt = grid.dt();

  FBSDEState cur;
  cur.n_paths = opts.n_paths;
  cur.lambda_weight = opts.lambda;

  std::vector<Matrix> prevY, prevZ, prevZt;  // raw mapping outputs
  bool converged = false;

  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    // With relaxation < 1 this evaluates the mapping at the damped iterate;
    // raw (Y,Z,Zt) slots always carry the latest mapping output.
    const ForwardPaths fwd =
        solve_forward(problem, grid, cur, noise, false);
    // A diverging Picard chain shows up first as an exploding forward panel;
    // classify that as non-convergence before the regressions choke on it.
    // The bound leaves room for fourth moments of the panel (degree-2 basis)
    // to stay finite, so divergence is always reported here and never as a
    // downstream overflow inside a regression.
    for (const Matrix& x : fwd.X) {
      if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e30)
        throw NonConvergenceError(
            "picard_solve: forward iterate diverged (expansive mapping; "
            "reduce the relaxation factor)",
            cur.ratio_history);
    }
    BackwardPaths bwd =
        solve_backward(problem, grid, fwd, noise, opts.ridge,
                       opts.basis_degree);

    const double dY2 =
        weighted_norm(panel_difference(bwd.Y, prevY), opts.lambda, dt);
    const double dZ2 =
        weighted_norm(panel_difference(bwd.Z, prevZ), opts.lambda, dt);
    const double dZt2 =
        weighted_norm(panel_difference(bwd.Zt, prevZt), opts.lambda, dt);
    const double diff = std::sqrt(dY2 + dZ2 + dZt2);
    cur.diffY_history.push_back(std::sqrt(dY2));
    cur.diffZ_history.push_back(std::sqrt(dZ2));
    cur.diffZt_history.push_back(std::sqrt(dZt2));
    if (!cur.diff_history.empty() && cur.diff_history.back() > 0.0)
      cur.ratio_history.push_back(diff / cur.diff_history.back());
    cur.diff_history.push_back(diff);
    cur.iterations = iter;

    if (cur.modelY.empty()) {
      cur.modelY.resize(nodes);
      cur.modelZ.resize(nodes);
      cur.modelZt.resize(nodes);
    }
    for (std::size_t k = 0; k < nodes; ++k) {
      cur.modelY[k] = blend_model(cur.modelY[k], bwd.modelY[k],
                                  opts.relaxation);
      cur.modelZ[k] = blend_model(cur.modelZ[k], bwd.modelZ[k],
                                  opts.relaxation);
      cur.modelZt[k] = blend_model(cur.modelZt[k], bwd.modelZt[k],
                                   opts.relaxation);
    }
    prevY = bwd.Y;
    prevZ = bwd.Z;
    prevZt = bwd.Zt;
    cur.Y = std::move(bwd.Y);
    cur.Z = std::move(bwd.Z);
    cur.Zt = std::move(bwd.Zt);

    if (!std::isfinite(diff))
      throw NonConvergenceError(
          "picard_solve: iteration diverged to non-finite values",
          cur.ratio_history);
    if (diff < opts.tol) {
      converged = true;
      break;
    }
  }

  if (!converged) {
    std::ostringstream os;
    os << "picard_solve: no convergence within " << opts.max_iter
       << " iterations (last difference " << cur.diff_history.back()
       << "); the contraction/smallness conditions appear violated at this "
          "scale";
    throw NonConvergenceError(os.str(), cur.ratio_history);
  }

  // Self-consistent final sweep with the converged models, recording the
  // control decomposition when the problem exposes one.
  ForwardPaths fwd =
      solve_forward(problem, grid, cur, noise, opts.record_controls);
  BackwardPaths bwd = solve_backward(problem, grid, fwd, noise, opts.ridge,
                                     opts.basis_degree);
  cur.X = std::move(fwd.X);
  cur.EX = std::move(fwd.EX);
  cur.Xhat = std::move(fwd.Xhat);
  cur.U = std::move(fwd.U);
  cur.U_raw = std::move(fwd.U_raw);
  cur.Y = std::move(bwd.Y);
  cur.Z = std::move(bwd.Z);
  cur.Zt = std::move(bwd.Zt);

  ContractionDiagnostics diag;
  diag.observed_ratio =
      cur.ratio_history.empty() ? 0.0 : cur.ratio_history.back();
  return {std::move(cur), diag};
}

std::pair<FBSDEState, ContractionDiagnostics> picard_solve(
    const MFFBSDEProblem& problem, const TimeGrid& grid, double lambda,
    double tol, std::size_t max_iter, std::size_t n_paths,
    std::uint64_t seed) {
  PicardOptions opts;
  opts.lambda = lambda;
  opts.tol = tol;
  opts.max_iter = max_iter;
  opts.n_paths = n_paths;
  opts.seed = seed;
  return picard_solve(problem, grid, opts);
}

namespace {

// Column-wise projection; routed through the scalar projector so constrained
// controls match a later per-path re-projection bit for bit.
Matrix project_columns(const ConstraintSet& gamma, const Matrix& R,
                       const Matrix& M) {
  if (gamma.kind == ConstraintSet::Kind::FullSpace) return M;
  Matrix out(M.rows(), M.cols());
  for (Eigen::Index j = 0; j < M.cols(); ++j)
    out.col(j) = project(gamma, R, M.col(j));
  return out;
}

struct CCContext {
  CoefficientSet coeffs;
  TimeGrid grid;
  ConstraintSet gamma;
  std::vector<Eigen::LLT<Matrix>> R_llt;

  std::size_t node_of(double t) const {
    const double pos = t / grid.dt();
    const auto k = static_cast<long long>(std::llround(pos));
    if (k < 0) return 0;
    const auto last = static_cast<long long>(grid.steps);
    return static_cast<std::size_t>(std::min(k, last));
  }

  // A forward sweep evaluates the drift, both diffusions and (when recording)
  // the control maps at the same node with the same conditional-expectation
  // panels, and the candidate depends on Θ only through those panels. A
  // single-entry memo collapses the repeated solves. Valid hits require the
  // node, the panel addresses, the panel width and the leading entries to
  // match; sweeps visit nodes in increasing order, so entries never survive
  // into a later pass on multi-step grids.
  struct ControlMemo {
    std::size_t k = static_cast<std::size_t>(-1);
    const double* eyc = nullptr;
    const double* ezc = nullptr;
    const double* eztc = nullptr;
    Eigen::Index cols = -1;
    std::array<double, 4> mark{};  // panel endpoint values
    Matrix raw, proj;
  };
  mutable ControlMemo memo;

  static std::array<double, 4> panel_mark(const ThetaBatch& th) {
    const auto last = th.EYc.size() - 1;
    return {th.EYc(0, 0), th.EYc(last), th.EZc(0, 0), th.EZtc(0, 0)};
  }

  const ControlMemo& controls_at(std::size_t k, const ThetaBatch& th) const {
    const bool nonempty = th.EYc.size() > 0 && th.EZc.size() > 0 &&
                          th.EZtc.size() > 0;
    const bool hit = memo.k == k && memo.eyc == th.EYc.data() &&
                     memo.ezc == th.EZc.data() &&
                     memo.eztc == th.EZtc.data() &&
                     memo.cols == th.EYc.cols() && nonempty &&
                     memo.mark == panel_mark(th);
    if (!hit) {
      memo.raw = R_llt[k].solve(coeffs.B[k].transpose() * th.EYc +
                                coeffs.D[k].transpose() * th.EZc +
                                coeffs.Dt[k].transpose() * th.EZtc);
      memo.proj = project_columns(gamma, coeffs.R[k], memo.raw);
      memo.k = k;
      memo.eyc = th.EYc.data();
      memo.ezc = th.EZc.data();
      memo.eztc = th.EZtc.data();
      memo.cols = th.EYc.cols();
      memo.mark = nonempty ? panel_mark(th) : std::array<double, 4>{};
    }
    return memo;
  }
};

}  // namespace

MFFBSDEProblem assemble_cc_system(const CoefficientSet& coeffs,
                                  const TimeGrid& grid,
                                  const ConstraintSet& gamma) {
  if (coeffs.nodes() != grid.nodes())
    throw StructuralError("assemble_cc_system: coefficient grid misaligned");
  if (gamma.kind == ConstraintSet::Kind::Box &&
      (static_cast<std::size_t>(gamma.lower.size()) != coeffs.m ||
       static_cast<std::size_t>(gamma.upper.size()) != coeffs.m))
    throw ArgumentError("assemble_cc_system: box bounds sized to m required");

  auto ctx = std::make_shared<CCContext>();
  ctx->coeffs = coeffs;
  ctx->grid = grid;
  ctx->gamma = gamma;
  ctx->R_llt.reserve(grid.nodes());
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    ctx->R_llt.emplace_back(symmetrize(coeffs.R[k]));
    if (ctx->R_llt.back().info() != Eigen::Success)
      throw ArgumentError(
          "assemble_cc_system: R not positive definite at node " +
          std::to_string(k));
  }

  MFFBSDEProblem problem;
  problem.n = coeffs.n;
  problem.m = coeffs.m;
  problem.d = 1;
  problem.x0 = coeffs.x0;

  problem.candidate_map = [ctx](std::size_t k, double, const ThetaBatch& th) {
    return ctx->controls_at(k, th).raw;
  };
  problem.control_map = [ctx](std::size_t k, double, const ThetaBatch& th) {
    return ctx->controls_at(k, th).proj;
  };

  problem.drift = [ctx](double t, const ThetaBatch& th) {
    const std::size_t k = ctx->node_of(t);
    const auto& c = ctx->coeffs;
    const Matrix& U = ctx->controls_at(k, th).proj;
    return ((c.A[k] * th.X + c.B[k] * U).colwise() +
            (c.F[k] * th.EX + c.b[k]))
        .eval();
  };
  problem.diffusion_w = [ctx](double t, const ThetaBatch& th) {
    const std::size_t k = ctx->node_of(t);
    const auto& c = ctx->coeffs;
    const Matrix& U = ctx->controls_at(k, th).proj;
    return ((c.C[k] * th.X + c.D[k] * U).colwise() +
            (c.H[k] * th.EX + c.sigma[k]))
        .eval();
  };
  problem.diffusion_wt = [ctx](double t, const ThetaBatch& th) {
    const std::size_t k = ctx->node_of(t);
    const auto& c = ctx->coeffs;
    const Matrix& U = ctx->controls_at(k, th).proj;
    return ((c.Ct[k] * th.X + c.Dt[k] * U).colwise() +
            (c.Ht[k] * th.EX + c.sigmat[k]))
        .eval();
  };
  problem.driver = [ctx](double t, const ThetaBatch& th) {
    const std::size_t k = ctx->node_of(t);
    const auto& c = ctx->coeffs;
    return ((c.A[k].transpose() * th.Y + c.C[k].transpose() * th.Z +
             c.Ct[k].transpose() * th.Zt - c.Q[k] * th.X)
                .colwise() +
            (c.Q[k] * th.EX))
        .eval();
  };
  problem.terminal = [ctx](const Matrix& xT, const Vector& exT) {
    const auto& c = ctx->coeffs;
    return ((-(c.G * xT)).colwise() + (c.G * exT)).eval();
  };
  return problem;
}

}  // namespace mfg
