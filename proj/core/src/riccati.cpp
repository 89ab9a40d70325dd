#include "mfglab/riccati.hpp"

#include <cmath>
#include <sstream>

namespace mfg {

namespace {

// R + D^T M D + Dt^T M Dt for a candidate P-value M at node/cell k.
Matrix rtilde_of(const CoefficientSet& c, std::size_t k, const Matrix& M) {
  return c.R[k] + c.D[k].transpose() * M * c.D[k] +
         c.Dt[k].transpose() * M * c.Dt[k];
}

Matrix ptilde_of(const CoefficientSet& c, std::size_t k, const Matrix& M) {
  return M * c.B[k] + c.C[k].transpose() * M * c.D[k];
}

// Cholesky-based solve of Rtilde * X = Rhs; failure is reported as loss of
// positive definiteness rather than silently regularized.
Matrix rtilde_solve(const CoefficientSet& c, std::size_t k, const Matrix& M,
                    const Matrix& rhs) {
  Eigen::LLT<Matrix> llt(symmetrize(rtilde_of(c, k, M)));
  if (llt.info() != Eigen::Success) {
    std::ostringstream os;
    os << "Rtilde lost positive definiteness near node " << k;
    throw InvariantError(os.str());
  }
  return llt.solve(rhs);
}

// Feedback gain Rtilde^-1 * Ptilde^T built from explicit coefficient
// samples; used where the sample time is a cell midpoint rather than a node.
Matrix psi_from(const Matrix& B, const Matrix& C, const Matrix& D,
                const Matrix& Dt, const Matrix& R, const Matrix& M) {
  const Matrix rtilde =
      R + D.transpose() * M * D + Dt.transpose() * M * Dt;
  const Matrix ptilde = M * B + C.transpose() * M * D;
  Eigen::LLT<Matrix> llt(symmetrize(rtilde));
  if (llt.info() != Eigen::Success)
    throw InvariantError("Rtilde lost positive definiteness at a cell midpoint");
  return llt.solve(ptilde.transpose());
}

// Negated right-hand side of the P equation: Pdot = -pflow(P).
Matrix pflow(const CoefficientSet& c, std::size_t k, const Matrix& P) {
  const Matrix Pt = ptilde_of(c, k, P);
  const Matrix gain = rtilde_solve(c, k, P, Pt.transpose());  // Rtilde^-1 Pt^T
  Matrix v = P * c.A[k] + c.A[k].transpose() * P +
             c.C[k].transpose() * P * c.C[k] + c.Q[k] - Pt * gain;
  return symmetrize(v);
}

// Negated right-hand side of the transformed companion equation:
// Pidot = -piflow(Pi; P).
Matrix piflow(const CoefficientSet& c, std::size_t k, const Matrix& Pi,
              const Matrix& P) {
  const Matrix DtPC = c.D[k].transpose() * P * c.C[k];           // m x n
  const Matrix Abar = c.A[k] - c.B[k] * rtilde_solve(c, k, P, DtPC);
  const Matrix DtP = c.D[k].transpose() * P;                     // m x n
  const Matrix source =
      c.C[k].transpose() *
      (P - DtP.transpose() * rtilde_solve(c, k, P, DtP)) * c.C[k];
  const Matrix BtPi = c.B[k].transpose() * Pi;                   // m x n
  Matrix v = Pi * Abar + Abar.transpose() * Pi + c.delta * Pi + source -
             BtPi.transpose() * rtilde_solve(c, k, P, BtPi);
  return symmetrize(v);
}

// Negated right-hand side of the Lambda equation: Lamdot = -lamflow(Lam; P).
Matrix lamflow(const CoefficientSet& c, std::size_t k, const Matrix& Lam,
               const Matrix& P) {
  const Matrix Pt = ptilde_of(c, k, P);
  const Matrix Acl = c.A[k] - c.B[k] * rtilde_solve(c, k, P, Pt.transpose());
  const Matrix BtLam = c.B[k].transpose() * Lam;
  Matrix v = Lam * Acl + Acl.transpose() * Lam + c.delta * (P + Lam) -
             BtLam.transpose() * rtilde_solve(c, k, P, BtLam) - c.Q[k];
  return symmetrize(v);
}

// Negated right-hand side of the offset equation: Phidot = -phiflow(Phi).
Vector phiflow(const CoefficientSet& c, std::size_t k, const Vector& Phi,
               const Matrix& P, const Matrix& Lam) {
  const Matrix Pt = ptilde_of(c, k, P);
  const Matrix RinvBt = rtilde_solve(c, k, P, c.B[k].transpose());  // m x n
  const Matrix RinvDt = rtilde_solve(c, k, P, c.D[k].transpose());
  const Matrix RinvDtt = rtilde_solve(c, k, P, c.Dt[k].transpose());
  const Vector Psig = P * c.sigma[k];
  const Vector Psigt = P * c.sigmat[k];
  return (c.A[k].transpose() - Pt * RinvBt - Lam * c.B[k] * RinvBt) * Phi +
         (c.C[k].transpose() - Pt * RinvDt - Lam * c.B[k] * RinvDt) * Psig -
         (Pt * RinvDtt + Lam * c.B[k] * RinvDtt) * Psigt + (P + Lam) * c.b[k];
}

// Right-hand side of the forward average ODE: ldot = +lflow(l).
Vector lflow(const CoefficientSet& c, std::size_t k, const Vector& l,
             const Matrix& P, const Matrix& Lam, const Vector& Phi) {
  const Matrix Pt = ptilde_of(c, k, P);
  const Matrix gain = rtilde_solve(
      c, k, P, Pt.transpose() + c.B[k].transpose() * Lam);  // m x n
  const Vector offset = rtilde_solve(
      c, k, P,
      c.B[k].transpose() * Phi + c.D[k].transpose() * (P * c.sigma[k]) +
          c.Dt[k].transpose() * (P * c.sigmat[k]));
  const Matrix deltaI = c.delta * Matrix::Identity(c.n, c.n);
  return (c.A[k] + deltaI - c.B[k] * gain) * l + c.b[k] - c.B[k] * offset;
}

void check_finite(const Matrix& m, std::size_t node, const char* what) {
  if (!m.allFinite()) {
    std::ostringstream os;
    os << "non-finite value while integrating " << what << " at node " << node;
    throw NonConvergenceError(os.str(), {});
  }
}

}  // namespace

MatrixGrid integrate_lyapunov(const MatrixGrid& Ahat, const MatrixGrid& Chat,
                              const MatrixGrid& Qhat, const MatrixGrid& Amid,
                              const MatrixGrid& Cmid, const MatrixGrid& Qmid,
                              const Matrix& terminal, const TimeGrid& grid) {
  const std::size_t nodes = grid.nodes();
  if (Ahat.size() != nodes || Chat.size() != nodes || Qhat.size() != nodes)
    throw StructuralError("integrate_lyapunov: coefficient grids misaligned");
  if (Amid.size() != grid.steps || Cmid.size() != grid.steps ||
      Qmid.size() != grid.steps)
    throw StructuralError("integrate_lyapunov: midpoint grids misaligned");
  if (terminal.rows() != terminal.cols())
    throw ArgumentError("integrate_lyapunov: terminal must be square");

  const double dt = grid.dt();
  MatrixGrid P(nodes);
  P[grid.steps] = symmetrize(terminal);
  for (std::size_t k = grid.steps; k-- > 0;) {
    // In reversed time the linear equation reads dP/ds = +flow(P). Stage
    // times run from t_{k+1} through the cell midpoint down to t_k.
    auto flow = [&](const Matrix& A, const Matrix& C, const Matrix& Q,
                    const Matrix& M) {
      return symmetrize(M * A + A.transpose() * M + C.transpose() * M * C + Q);
    };
    const Matrix& y = P[k + 1];
    const Matrix k1 = flow(Ahat[k + 1], Chat[k + 1], Qhat[k + 1], y);
    const Matrix k2 = flow(Amid[k], Cmid[k], Qmid[k], y + 0.5 * dt * k1);
    const Matrix k3 = flow(Amid[k], Cmid[k], Qmid[k], y + 0.5 * dt * k2);
    const Matrix k4 = flow(Ahat[k], Chat[k], Qhat[k], y + dt * k3);
    P[k] = symmetrize(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    check_finite(P[k], k, "linear matrix equation");
  }
  return P;
}

MatrixGrid integrate_lyapunov(const MatrixGrid& Ahat, const MatrixGrid& Chat,
                              const MatrixGrid& Qhat, const Matrix& terminal,
                              const TimeGrid& grid) {
  const std::size_t nodes = grid.nodes();
  if (Ahat.size() != nodes || Chat.size() != nodes || Qhat.size() != nodes)
    throw StructuralError("integrate_lyapunov: coefficient grids misaligned");
  MatrixGrid Amid(grid.steps), Cmid(grid.steps), Qmid(grid.steps);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    Amid[k] = 0.5 * (Ahat[k] + Ahat[k + 1]);
    Cmid[k] = 0.5 * (Chat[k] + Chat[k + 1]);
    Qmid[k] = 0.5 * (Qhat[k] + Qhat[k + 1]);
  }
  return integrate_lyapunov(Ahat, Chat, Qhat, Amid, Cmid, Qmid, terminal,
                            grid);
}

MatrixGrid solve_P_direct(const CoefficientSet& coeffs, const TimeGrid& grid) {
  const std::size_t nodes = grid.nodes();
  if (coeffs.nodes() != nodes)
    throw StructuralError("solve_P_direct: coefficient grids misaligned");
  const double dt = grid.dt();
  MatrixGrid P(nodes);
  P[grid.steps] = symmetrize(coeffs.G);
  for (std::size_t k = grid.steps; k-- > 0;) {
    auto flow = [&](const Matrix& M) { return pflow(coeffs, k, M); };
    const Matrix& y = P[k + 1];
    const Matrix k1 = flow(y);
    const Matrix k2 = flow(y + 0.5 * dt * k1);
    const Matrix k3 = flow(y + 0.5 * dt * k2);
    const Matrix k4 = flow(y + dt * k3);
    P[k] = symmetrize(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    check_finite(P[k], k, "P equation");
  }
  return P;
}

namespace {

// Cubic-Hermite midpoint of a grid quantity whose nodal time derivative is
// known; keeps stage evaluations of previously solved quantities at 4th
// order accuracy inside the RK4 sweeps below.
template <typename T>
std::vector<T> hermite_midpoints(const std::vector<T>& values,
                                 const std::vector<T>& derivs, double dt) {
  std::vector<T> mid(values.size() - 1);
  for (std::size_t k = 0; k + 1 < values.size(); ++k) {
    mid[k] = 0.5 * (values[k] + values[k + 1]) +
             (dt / 8.0) * (derivs[k] - derivs[k + 1]);
  }
  return mid;
}

std::vector<Matrix> p_derivatives(const CoefficientSet& c,
                                  const MatrixGrid& P) {
  std::vector<Matrix> d(P.size());
  for (std::size_t k = 0; k < P.size(); ++k) d[k] = -pflow(c, k, P[k]);
  return d;
}

}  // namespace

std::pair<MatrixGrid, std::size_t> solve_P_iterative(
    const CoefficientSet& coeffs, const TimeGrid& grid, double tol,
    std::size_t max_iter) {
  const std::size_t nodes = grid.nodes();
  if (coeffs.nodes() != nodes)
    throw StructuralError("solve_P_iterative: coefficient grids misaligned");

  // Base pass: the linear equation with the raw A, C, Q.
  MatrixGrid P_cur = integrate_lyapunov(coeffs.A, coeffs.C, coeffs.Q,
                                        coeffs.G, grid);
  std::vector<double> diff_history;
  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    MatrixGrid Ahat(nodes), Chat(nodes), Qhat(nodes);
    for (std::size_t k = 0; k < nodes; ++k) {
      const Matrix psi = rtilde_solve(coeffs, k, P_cur[k],
                                      ptilde_of(coeffs, k, P_cur[k]).transpose());
      Ahat[k] = coeffs.A[k] - coeffs.B[k] * psi;
      Chat[k] = coeffs.C[k] - coeffs.D[k] * psi;
      const Matrix Rsoft =
          coeffs.R[k] + coeffs.Dt[k].transpose() * P_cur[k] * coeffs.Dt[k];
      Qhat[k] = symmetrize(coeffs.Q[k] + psi.transpose() * Rsoft * psi);
    }
    // Midpoint coefficient samples keep each linear solve at full order even
    // though the linearized coefficients vary strongly in time. The iterate's
    // midpoints come from a Hermite reconstruction whose slope is the full
    // equation's flow, which is exact once the chain has converged.
    const std::vector<Matrix> dP = p_derivatives(coeffs, P_cur);
    const MatrixGrid P_mid = hermite_midpoints(P_cur, dP, grid.dt());
    MatrixGrid Amid(grid.steps), Cmid(grid.steps), Qmid(grid.steps);
    for (std::size_t k = 0; k < grid.steps; ++k) {
      const Matrix Am = 0.5 * (coeffs.A[k] + coeffs.A[k + 1]);
      const Matrix Bm = 0.5 * (coeffs.B[k] + coeffs.B[k + 1]);
      const Matrix Cm = 0.5 * (coeffs.C[k] + coeffs.C[k + 1]);
      const Matrix Dm = 0.5 * (coeffs.D[k] + coeffs.D[k + 1]);
      const Matrix Dtm = 0.5 * (coeffs.Dt[k] + coeffs.Dt[k + 1]);
      const Matrix Rm = 0.5 * (coeffs.R[k] + coeffs.R[k + 1]);
      const Matrix Qm = 0.5 * (coeffs.Q[k] + coeffs.Q[k + 1]);
      const Matrix psi = psi_from(Bm, Cm, Dm, Dtm, Rm, P_mid[k]);
      Amid[k] = Am - Bm * psi;
      Cmid[k] = Cm - Dm * psi;
      const Matrix Rsoft = Rm + Dtm.transpose() * P_mid[k] * Dtm;
      Qmid[k] = symmetrize(Qm + psi.transpose() * Rsoft * psi);
    }
    MatrixGrid P_next = integrate_lyapunov(Ahat, Chat, Qhat, Amid, Cmid, Qmid,
                                           coeffs.G, grid);

    double diff = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) {
      const Matrix gap = P_cur[k] - P_next[k];
      const double ev = min_eigenvalue(gap);
      if (ev < -1e-10) {
        std::ostringstream os;
        os << "monotone iterate chain violated at iteration " << iter
           << ", node " << k << " (min eigenvalue " << ev << ")";
        throw InvariantError(os.str());
      }
      if (min_eigenvalue(P_next[k]) < -1e-10) {
        std::ostringstream os;
        os << "iterate lost positive semidefiniteness at iteration " << iter
           << ", node " << k;
        throw InvariantError(os.str());
      }
      diff = std::max(diff, spectral_norm_sym(gap));
    }
    diff_history.push_back(diff);
    P_cur = std::move(P_next);
    if (diff < tol) return {P_cur, iter};
  }
  std::ostringstream os;
  os << "iterative P scheme did not reach tolerance " << tol << " within "
     << max_iter << " iterations (last difference "
     << diff_history.back() << ")";
  throw NonConvergenceError(os.str(), diff_history);
}

MatrixGrid solve_Pi(const CoefficientSet& coeffs, const TimeGrid& grid,
                    const MatrixGrid& P) {
  const std::size_t nodes = grid.nodes();
  if (P.size() != nodes)
    throw StructuralError("solve_Pi: P grid misaligned with time grid");
  const double dt = grid.dt();
  const MatrixGrid Pmid =
      hermite_midpoints(P, p_derivatives(coeffs, P), dt);

  MatrixGrid Pi(nodes);
  Pi[grid.steps] = Matrix::Zero(coeffs.n, coeffs.n);
  for (std::size_t k = grid.steps; k-- > 0;) {
    auto flow = [&](const Matrix& M, const Matrix& Pval) {
      return piflow(coeffs, k, M, Pval);
    };
    const Matrix& y = Pi[k + 1];
    const Matrix k1 = flow(y, P[k + 1]);
    const Matrix k2 = flow(y + 0.5 * dt * k1, Pmid[k]);
    const Matrix k3 = flow(y + 0.5 * dt * k2, Pmid[k]);
    const Matrix k4 = flow(y + dt * k3, P[k]);
    Pi[k] = symmetrize(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    check_finite(Pi[k], k, "companion equation");
  }

  for (std::size_t k = 0; k < nodes; ++k) {
    const Matrix DtP = coeffs.D[k].transpose() * P[k];
    const Matrix source =
        coeffs.C[k].transpose() *
        (P[k] - DtP.transpose() * rtilde_solve(coeffs, k, P[k], DtP)) *
        coeffs.C[k];
    if (min_eigenvalue(source) < -1e-10) {
      std::ostringstream os;
      os << "companion source term lost positive semidefiniteness at node "
         << k << " (P inconsistent or dt too coarse)";
      throw InvariantError(os.str());
    }
    if (min_eigenvalue(Pi[k]) < -1e-10) {
      std::ostringstream os;
      os << "companion solution lost positive semidefiniteness at node " << k
         << " (P inconsistent or dt too coarse)";
      throw InvariantError(os.str());
    }
  }
  return Pi;
}

VectorGrid solve_Phi(const CoefficientSet& coeffs, const TimeGrid& grid,
                     const MatrixGrid& P, const MatrixGrid& Lambda) {
  const std::size_t nodes = grid.nodes();
  if (P.size() != nodes || Lambda.size() != nodes)
    throw StructuralError("solve_Phi: input grids misaligned");
  const double dt = grid.dt();
  const std::vector<Matrix> Pdot = p_derivatives(coeffs, P);
  std::vector<Matrix> Lamdot(nodes);
  for (std::size_t k = 0; k < nodes; ++k)
    Lamdot[k] = -lamflow(coeffs, k, Lambda[k], P[k]);
  const MatrixGrid Pmid = hermite_midpoints(P, Pdot, dt);
  const MatrixGrid Lammid = hermite_midpoints(Lambda, Lamdot, dt);

  VectorGrid Phi(nodes);
  Phi[grid.steps] = Vector::Zero(coeffs.n);
  for (std::size_t k = grid.steps; k-- > 0;) {
    auto flow = [&](const Vector& v, const Matrix& Pval, const Matrix& Lval) {
      return phiflow(coeffs, k, v, Pval, Lval);
    };
    const Vector& y = Phi[k + 1];
    const Vector k1 = flow(y, P[k + 1], Lambda[k + 1]);
    const Vector k2 = flow(y + 0.5 * dt * k1, Pmid[k], Lammid[k]);
    const Vector k3 = flow(y + 0.5 * dt * k2, Pmid[k], Lammid[k]);
    const Vector k4 = flow(y + dt * k3, P[k], Lambda[k]);
    Phi[k] = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!Phi[k].allFinite())
      throw NonConvergenceError(
          "non-finite value while integrating offset equation at node " +
              std::to_string(k),
          {});
  }
  return Phi;
}

VectorGrid solve_l(const CoefficientSet& coeffs, const TimeGrid& grid,
                   const MatrixGrid& P, const MatrixGrid& Lambda,
                   const VectorGrid& Phi) {
  const std::size_t nodes = grid.nodes();
  if (P.size() != nodes || Lambda.size() != nodes || Phi.size() != nodes)
    throw StructuralError("solve_l: input grids misaligned");
  const double dt = grid.dt();
  const std::vector<Matrix> Pdot = p_derivatives(coeffs, P);
  std::vector<Matrix> Lamdot(nodes);
  std::vector<Vector> Phidot(nodes);
  for (std::size_t k = 0; k < nodes; ++k) {
    Lamdot[k] = -lamflow(coeffs, k, Lambda[k], P[k]);
    Phidot[k] = -phiflow(coeffs, k, Phi[k], P[k], Lambda[k]);
  }
  const MatrixGrid Pmid = hermite_midpoints(P, Pdot, dt);
  const MatrixGrid Lammid = hermite_midpoints(Lambda, Lamdot, dt);
  const VectorGrid Phimid = hermite_midpoints(Phi, Phidot, dt);

  VectorGrid l(nodes);
  l[0] = coeffs.x0;
  for (std::size_t k = 0; k < grid.steps; ++k) {
    auto flow = [&](const Vector& v, const Matrix& Pval, const Matrix& Lval,
                    const Vector& Phival) {
      return lflow(coeffs, k, v, Pval, Lval, Phival);
    };
    const Vector& y = l[k];
    const Vector k1 = flow(y, P[k], Lambda[k], Phi[k]);
    const Vector k2 = flow(y + 0.5 * dt * k1, Pmid[k], Lammid[k], Phimid[k]);
    const Vector k3 = flow(y + 0.5 * dt * k2, Pmid[k], Lammid[k], Phimid[k]);
    const Vector k4 = flow(y + dt * k3, P[k + 1], Lambda[k + 1], Phi[k + 1]);
    l[k + 1] = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!l[k + 1].allFinite())
      throw NonConvergenceError(
          "non-finite value while integrating average ODE at node " +
              std::to_string(k + 1),
          {});
  }
  return l;
}

ScalarClosedForm closed_form_scalar_P(double A, double a, double B, double eps,
                                      double r, double c, double T) {
  if (!(r > 0.0)) throw ArgumentError("closed_form_scalar_P: need r > 0");
  if (B == 0.0) throw ArgumentError("closed_form_scalar_P: need B != 0");

  ScalarClosedForm form;
  const double gap = A - a;

  if (eps == 0.0 && c == 0.0) {
    // Homogeneous equation with zero terminal: the zero solution.
    form.theta = std::abs(gap);
    form.k_ratio = 0.0;
    form.P_of_t = [](double) { return 0.0; };
    return form;
  }

  const double theta = std::sqrt(gap * gap + B * B * eps / r);
  const double lead = B * B * c / r;
  const double denom_k = lead - gap + theta;
  if (std::abs(denom_k) < 1e-14)
    throw ArgumentError(
        "closed_form_scalar_P: degenerate parameter regime (ratio undefined)");
  const double k = (lead - (gap + theta)) / denom_k;

  auto evaluate = [=](double t) {
    const double e = std::exp(2.0 * theta * (t - T));
    const double den = 1.0 - k * e;
    if (std::abs(den) < 1e-12)
      throw ArgumentError(
          "closed_form_scalar_P: denominator vanishes on [0, T] (blow-up "
          "regime)");
    return (r / (B * B)) * (gap + theta + (theta - gap) * k * e) / den;
  };
  // Scan for blow-up inside the horizon up front so the error names the
  // parameter regime instead of surfacing at a random later evaluation.
  for (int i = 0; i <= 2048; ++i) (void)evaluate(T * i / 2048.0);

  form.theta = theta;
  form.k_ratio = k;
  form.P_of_t = evaluate;
  return form;
}

namespace {

// Derivative estimates at stencil-interior nodes: 4th-order five-point
// central differences when the grid allows, else 3-point central.
template <typename T>
std::vector<std::pair<std::size_t, T>> derivative_stencil(
    const std::vector<T>& g, double dt) {
  std::vector<std::pair<std::size_t, T>> out;
  const std::size_t nodes = g.size();
  if (nodes >= 9) {
    for (std::size_t k = 2; k + 2 < nodes; ++k) {
      T d = (-g[k + 2] + 8.0 * g[k + 1] - 8.0 * g[k - 1] + g[k - 2]) /
            (12.0 * dt);
      out.emplace_back(k, std::move(d));
    }
  } else {
    for (std::size_t k = 1; k + 1 < nodes; ++k) {
      T d = (g[k + 1] - g[k - 1]) / (2.0 * dt);
      out.emplace_back(k, std::move(d));
    }
  }
  return out;
}

}  // namespace

double residual_P(const MatrixGrid& P, const CoefficientSet& coeffs,
                  const TimeGrid& grid) {
  if (P.size() != grid.nodes() || P.size() < 3)
    throw StructuralError("residual_P: need an aligned grid with >= 3 nodes");
  double worst = 0.0;
  for (auto& [k, Pdot] : derivative_stencil(P, grid.dt())) {
    const Matrix lhs = Pdot + pflow(coeffs, k, P[k]);
    worst = std::max(worst, lhs.norm());
  }
  return worst;
}

double residual_Lambda(const MatrixGrid& Lambda, const MatrixGrid& P,
                       const CoefficientSet& coeffs, const TimeGrid& grid) {
  if (Lambda.size() != grid.nodes() || Lambda.size() < 3)
    throw StructuralError("residual_Lambda: need an aligned grid with >= 3 nodes");
  double worst = 0.0;
  for (auto& [k, Ldot] : derivative_stencil(Lambda, grid.dt())) {
    const Matrix lhs = Ldot + lamflow(coeffs, k, Lambda[k], P[k]);
    worst = std::max(worst, lhs.norm());
  }
  return worst;
}

double residual_Phi(const VectorGrid& Phi, const MatrixGrid& P,
                    const MatrixGrid& Lambda, const CoefficientSet& coeffs,
                    const TimeGrid& grid) {
  if (Phi.size() != grid.nodes() || Phi.size() < 3)
    throw StructuralError("residual_Phi: need an aligned grid with >= 3 nodes");
  double worst = 0.0;
  for (auto& [k, Phidot] : derivative_stencil(Phi, grid.dt())) {
    const Vector lhs = Phidot + phiflow(coeffs, k, Phi[k], P[k], Lambda[k]);
    worst = std::max(worst, lhs.norm());
  }
  return worst;
}

double residual_l(const VectorGrid& l, const MatrixGrid& P,
                  const MatrixGrid& Lambda, const VectorGrid& Phi,
                  const CoefficientSet& coeffs, const TimeGrid& grid) {
  if (l.size() != grid.nodes() || l.size() < 3)
    throw StructuralError("residual_l: need an aligned grid with >= 3 nodes");
  double worst = 0.0;
  for (auto& [k, ldot] : derivative_stencil(l, grid.dt())) {
    const Vector lhs = ldot - lflow(coeffs, k, l[k], P[k], Lambda[k], Phi[k]);
    worst = std::max(worst, lhs.norm());
  }
  return worst;
}

RiccatiSolution solve_riccati(const CoefficientSet& coeffs,
                              const TimeGrid& grid,
                              const RiccatiOptions& opts) {
  RiccatiSolution sol;
  if (opts.p_method == RiccatiOptions::PMethod::Iterative) {
    auto [P, iters] =
        solve_P_iterative(coeffs, grid, opts.iter_tol, opts.max_iter);
    sol.P = std::move(P);
    sol.iteration_count = iters;
  } else {
    sol.P = solve_P_direct(coeffs, grid);
    sol.iteration_count = 0;
  }

  sol.Pi = solve_Pi(coeffs, grid, sol.P);
  const std::size_t nodes = grid.nodes();
  sol.Lambda.resize(nodes);
  for (std::size_t k = 0; k < nodes; ++k) sol.Lambda[k] = sol.Pi[k] - sol.P[k];
  sol.Phi = solve_Phi(coeffs, grid, sol.P, sol.Lambda);
  sol.l = solve_l(coeffs, grid, sol.P, sol.Lambda, sol.Phi);

  sol.Rtilde.resize(nodes);
  sol.Ptilde.resize(nodes);
  for (std::size_t k = 0; k < nodes; ++k) {
    sol.Rtilde[k] = symmetrize(rtilde_of(coeffs, k, sol.P[k]));
    sol.Ptilde[k] = ptilde_of(coeffs, k, sol.P[k]);
    Eigen::LLT<Matrix> llt(sol.Rtilde[k]);
    if (llt.info() != Eigen::Success)
      throw InvariantError("Rtilde not positive definite at node " +
                           std::to_string(k));
  }

  sol.residuals.P = residual_P(sol.P, coeffs, grid);
  sol.residuals.Lambda = residual_Lambda(sol.Lambda, sol.P, coeffs, grid);
  sol.residuals.Phi = residual_Phi(sol.Phi, sol.P, sol.Lambda, coeffs, grid);
  sol.residuals.l =
      residual_l(sol.l, sol.P, sol.Lambda, sol.Phi, coeffs, grid);

  if (opts.check_invariants) {
    for (std::size_t k = 0; k < nodes; ++k) {
      if ((sol.P[k] - sol.P[k].transpose()).norm() > 1e-12 ||
          (sol.Lambda[k] - sol.Lambda[k].transpose()).norm() > 1e-12 ||
          (sol.Pi[k] - sol.Pi[k].transpose()).norm() > 1e-12)
        throw InvariantError("asymmetric solution matrix at node " +
                             std::to_string(k));
      if (min_eigenvalue(sol.P[k]) < -1e-10)
        throw InvariantError("P lost positive semidefiniteness at node " +
                             std::to_string(k));
      if ((sol.Pi[k] - (sol.P[k] + sol.Lambda[k])).norm() > 1e-12)
        throw InvariantError("companion identity Pi = P + Lambda broken at node " +
                             std::to_string(k));
    }
  }
  return sol;
}

}  // namespace mfg
