#include "mfglab/filtersim.hpp"

#include <cmath>
#include <sstream>

#include "mfglab/parallel.hpp"
#include "mfglab/rng.hpp"

namespace mfg {

namespace {

void check_aligned(const FeedbackLaw& law, const CoefficientSet& coeffs,
                   const TimeGrid& grid) {
  if (law.nodes() != grid.nodes() || coeffs.nodes() != grid.nodes() ||
      law.K_l.size() != law.K.size() || law.c_off.size() != law.K.size() ||
      law.l_ref.size() != law.K.size())
    throw StructuralError("feedback law grids misaligned with time grid");
}

// One Euler step of the filter SDE; shared verbatim by every simulator so
// noise-coupled runs agree bitwise.
Vector filter_step(const CoefficientSet& c, const FeedbackLaw& law,
                   std::size_t k, double dt, const Vector& zh, const Vector& u,
                   double dW) {
  return zh +
         dt * (c.A[k] * zh + c.B[k] * u + c.delta * law.l_ref[k] + c.b[k]) +
         (c.C[k] * zh + c.D[k] * u + c.sigma[k]) * dW;
}

// One Euler step of the true state; `xbar` is the population average for the
// N-agent system and the deterministic limit trajectory for the limiting one.
Vector state_step(const CoefficientSet& c, std::size_t k, double dt,
                  const Vector& x, const Vector& u, const Vector& xbar,
                  double dW, double dWt) {
  return x + dt * (c.A[k] * x + c.B[k] * u + c.F[k] * xbar + c.b[k]) +
         (c.C[k] * x + c.D[k] * u + c.H[k] * xbar + c.sigma[k]) * dW +
         (c.Ct[k] * x + c.Dt[k] * u + c.Ht[k] * xbar + c.sigmat[k]) * dWt;
}

double draw(std::uint64_t seed, NoisePurpose purpose, std::uint64_t rep,
            std::uint64_t agent, std::uint64_t path, std::uint64_t step,
            double dt) {
  NoiseKey key;
  key.seed = seed;
  key.purpose = purpose;
  key.rep = rep;
  key.agent = agent;
  key.path = path;
  key.step = step;
  return brownian_increment(key, dt);
}

std::vector<std::vector<Matrix>> grid_storage(std::size_t agents,
                                              std::size_t nodes,
                                              Eigen::Index rows,
                                              Eigen::Index cols) {
  std::vector<std::vector<Matrix>> out(agents);
  for (auto& per_agent : out)
    per_agent.assign(nodes, Matrix::Zero(rows, cols));
  return out;
}

// Shared population kernel; when `alt` is non-null agent slot 0 applies it
// instead of the equilibrium feedback.
PathEnsemble population_kernel(std::size_t N, const FeedbackLaw& law,
                               const ControlRule* alt,
                               const CoefficientSet& coeffs,
                               const TimeGrid& grid, std::size_t n_paths,
                               std::uint64_t seed, const ConstraintSet& gamma,
                               std::uint64_t rep,
                               const std::vector<std::uint64_t>& agent_keys) {
  check_aligned(law, coeffs, grid);
  if (N < 1) throw ArgumentError("simulate_population: need N >= 1");
  if (n_paths < 1) throw ArgumentError("simulate_population: need paths >= 1");
  if (!agent_keys.empty() && agent_keys.size() != N)
    throw ArgumentError("simulate_population: agent key list must have N entries");

  const std::size_t nodes = grid.nodes();
  const double dt = grid.dt();
  const auto n = static_cast<Eigen::Index>(coeffs.n);
  const auto m = static_cast<Eigen::Index>(coeffs.m);

  PathEnsemble ens;
  ens.n_agents = N;
  ens.n_paths = n_paths;
  ens.dt = dt;
  ens.seed = seed;
  ens.states = grid_storage(N, nodes, n, static_cast<Eigen::Index>(n_paths));
  ens.filters = grid_storage(N, nodes, n, static_cast<Eigen::Index>(n_paths));
  ens.controls = grid_storage(N, nodes, m, static_cast<Eigen::Index>(n_paths));

  parallel_for(n_paths, [&](std::size_t p) {
    std::vector<Vector> x(N, coeffs.x0), zh(N, coeffs.x0);
    std::vector<Vector> u(N, Vector::Zero(m));
    for (std::size_t k = 0; k < nodes; ++k) {
      for (std::size_t i = 0; i < N; ++i) {
        if (i == 0 && alt) {
          u[i] = (*alt)(k, zh[i], law.l_ref[k]);
          if (u[i].size() != m)
            throw ArgumentError(
                "alternative strategy returned a control of wrong dimension");
          if (!gamma.contains(u[i], 1e-9)) {
            std::ostringstream os;
            os << "alternative strategy left the admissible set at node " << k;
            throw ArgumentError(os.str());
          }
        } else {
          u[i] = constrained_control(law, gamma, coeffs, k, zh[i]);
        }
        ens.states[i][k].col(static_cast<Eigen::Index>(p)) = x[i];
        ens.filters[i][k].col(static_cast<Eigen::Index>(p)) = zh[i];
        ens.controls[i][k].col(static_cast<Eigen::Index>(p)) = u[i];
      }
      if (k == grid.steps) break;

      Vector xbar = Vector::Zero(n);
      for (std::size_t i = 0; i < N; ++i) xbar += x[i];
      xbar /= static_cast<double>(N);

      for (std::size_t i = 0; i < N; ++i) {
        const std::uint64_t id = agent_keys.empty() ? i : agent_keys[i];
        const double dW =
            draw(seed, NoisePurpose::kObservable, rep, id, p, k, dt);
        const double dWt =
            draw(seed, NoisePurpose::kUnobservable, rep, id, p, k, dt);
        x[i] = state_step(coeffs, k, dt, x[i], u[i], xbar, dW, dWt);
        zh[i] = filter_step(coeffs, law, k, dt, zh[i], u[i], dW);
      }
    }
  });
  return ens;
}

}  // namespace

FeedbackLaw build_feedback(const RiccatiSolution& sol,
                           const CoefficientSet& coeffs) {
  const std::size_t nodes = sol.P.size();
  if (nodes == 0 || sol.Lambda.size() != nodes || sol.Phi.size() != nodes ||
      sol.l.size() != nodes || sol.Rtilde.size() != nodes ||
      sol.Ptilde.size() != nodes || coeffs.nodes() != nodes)
    throw StructuralError("build_feedback: solution grids misaligned");

  FeedbackLaw law;
  law.K.resize(nodes);
  law.K_l.resize(nodes);
  law.c_off.resize(nodes);
  law.l_ref = sol.l;
  for (std::size_t k = 0; k < nodes; ++k) {
    Eigen::LLT<Matrix> llt(sol.Rtilde[k]);
    if (llt.info() != Eigen::Success)
      throw InvariantError("build_feedback: singular Rtilde at node " +
                           std::to_string(k));
    law.K[k] = -llt.solve(sol.Ptilde[k].transpose());
    law.K_l[k] = -llt.solve(coeffs.B[k].transpose() * sol.Lambda[k]);
    law.c_off[k] = -llt.solve(
        coeffs.B[k].transpose() * sol.Phi[k] +
        coeffs.D[k].transpose() * (sol.P[k] * coeffs.sigma[k]) +
        coeffs.Dt[k].transpose() * (sol.P[k] * coeffs.sigmat[k]));
    if (!law.K[k].allFinite() || !law.K_l[k].allFinite() ||
        !law.c_off[k].allFinite())
      throw InvariantError("build_feedback: non-finite gain at node " +
                           std::to_string(k));
  }
  return law;
}

Vector feedback_control(const FeedbackLaw& law, std::size_t k,
                        const Vector& zhat) {
  return law.K[k] * zhat + law.K_l[k] * law.l_ref[k] + law.c_off[k];
}

Vector constrained_control(const FeedbackLaw& law, const ConstraintSet& gamma,
                           const CoefficientSet& coeffs, std::size_t k,
                           const Vector& zhat) {
  return project(gamma, coeffs.R[k], feedback_control(law, k, zhat));
}

PathEnsemble simulate_filter(const FeedbackLaw& law,
                             const CoefficientSet& coeffs,
                             const TimeGrid& grid, std::size_t n_paths,
                             std::uint64_t seed, const ConstraintSet& gamma) {
  check_aligned(law, coeffs, grid);
  if (n_paths < 1) throw ArgumentError("simulate_filter: need paths >= 1");

  const std::size_t nodes = grid.nodes();
  const double dt = grid.dt();
  const auto n = static_cast<Eigen::Index>(coeffs.n);
  const auto m = static_cast<Eigen::Index>(coeffs.m);

  PathEnsemble ens;
  ens.n_agents = 1;
  ens.n_paths = n_paths;
  ens.dt = dt;
  ens.seed = seed;
  ens.filters = grid_storage(1, nodes, n, static_cast<Eigen::Index>(n_paths));
  ens.controls = grid_storage(1, nodes, m, static_cast<Eigen::Index>(n_paths));

  parallel_for(n_paths, [&](std::size_t p) {
    Vector zh = coeffs.x0;
    for (std::size_t k = 0; k < nodes; ++k) {
      const Vector u = constrained_control(law, gamma, coeffs, k, zh);
      ens.filters[0][k].col(static_cast<Eigen::Index>(p)) = zh;
      ens.controls[0][k].col(static_cast<Eigen::Index>(p)) = u;
      if (k == grid.steps) break;
      const double dW =
          draw(seed, NoisePurpose::kObservable, 0, 0, p, k, dt);
      zh = filter_step(coeffs, law, k, dt, zh, u, dW);
    }
  });
  return ens;
}

PathEnsemble simulate_population(std::size_t N, const FeedbackLaw& law,
                                 const CoefficientSet& coeffs,
                                 const TimeGrid& grid, std::size_t n_paths,
                                 std::uint64_t seed, const ConstraintSet& gamma,
                                 std::uint64_t rep,
                                 const std::vector<std::uint64_t>& agent_keys) {
  return population_kernel(N, law, nullptr, coeffs, grid, n_paths, seed, gamma,
                           rep, agent_keys);
}

PathEnsemble simulate_population_deviating(
    std::size_t N, const FeedbackLaw& law, const ControlRule& alt,
    const CoefficientSet& coeffs, const TimeGrid& grid, std::size_t n_paths,
    std::uint64_t seed, const ConstraintSet& gamma, std::uint64_t rep) {
  if (!alt)
    throw ArgumentError("simulate_population_deviating: empty strategy");
  return population_kernel(N, law, &alt, coeffs, grid, n_paths, seed, gamma,
                           rep, {});
}

PathEnsemble simulate_limit_agent(const FeedbackLaw& law,
                                  const CoefficientSet& coeffs,
                                  const TimeGrid& grid, std::size_t n_paths,
                                  std::uint64_t seed,
                                  const ConstraintSet& gamma, std::uint64_t rep,
                                  std::uint64_t agent) {
  check_aligned(law, coeffs, grid);
  if (n_paths < 1) throw ArgumentError("simulate_limit_agent: need paths >= 1");

  const std::size_t nodes = grid.nodes();
  const double dt = grid.dt();
  const auto n = static_cast<Eigen::Index>(coeffs.n);
  const auto m = static_cast<Eigen::Index>(coeffs.m);

  PathEnsemble ens;
  ens.n_agents = 1;
  ens.n_paths = n_paths;
  ens.dt = dt;
  ens.seed = seed;
  ens.states = grid_storage(1, nodes, n, static_cast<Eigen::Index>(n_paths));
  ens.filters = grid_storage(1, nodes, n, static_cast<Eigen::Index>(n_paths));
  ens.controls = grid_storage(1, nodes, m, static_cast<Eigen::Index>(n_paths));

  parallel_for(n_paths, [&](std::size_t p) {
    Vector z = coeffs.x0, zh = coeffs.x0;
    for (std::size_t k = 0; k < nodes; ++k) {
      const Vector u = constrained_control(law, gamma, coeffs, k, zh);
      ens.states[0][k].col(static_cast<Eigen::Index>(p)) = z;
      ens.filters[0][k].col(static_cast<Eigen::Index>(p)) = zh;
      ens.controls[0][k].col(static_cast<Eigen::Index>(p)) = u;
      if (k == grid.steps) break;
      const double dW =
          draw(seed, NoisePurpose::kObservable, rep, agent, p, k, dt);
      const double dWt =
          draw(seed, NoisePurpose::kUnobservable, rep, agent, p, k, dt);
      z = state_step(coeffs, k, dt, z, u, law.l_ref[k], dW, dWt);
      zh = filter_step(coeffs, law, k, dt, zh, u, dW);
    }
  });
  return ens;
}

namespace {

CostEstimate cost_impl(const PathEnsemble& ens, const CoefficientSet& coeffs,
                       std::size_t agent_index, const VectorGrid* reference) {
  if (agent_index >= ens.n_agents)
    throw ArgumentError("evaluate_cost: agent index out of range");
  if (ens.states.empty() || ens.states.front().empty())
    throw StructuralError("evaluate_cost: ensemble holds no true state paths");
  const std::size_t nodes = ens.nodes();
  if (coeffs.nodes() != nodes)
    throw StructuralError("evaluate_cost: coefficient grid misaligned");
  if (reference && reference->size() != nodes)
    throw StructuralError("evaluate_cost: reference trajectory misaligned");
  const std::size_t steps = nodes - 1;
  const double dt = ens.dt;

  std::vector<double> per_path(ens.n_paths, 0.0);
  for (std::size_t p = 0; p < ens.n_paths; ++p) {
    const auto pc = static_cast<Eigen::Index>(p);
    double acc = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) {
      Vector center;
      if (reference) {
        center = (*reference)[k];
      } else {
        center = Vector::Zero(static_cast<Eigen::Index>(coeffs.n));
        for (std::size_t i = 0; i < ens.n_agents; ++i)
          center += ens.states[i][k].col(pc);
        center /= static_cast<double>(ens.n_agents);
      }
      const Vector e = ens.states[agent_index][k].col(pc) - center;
      const Vector u = ens.controls[agent_index][k].col(pc);
      const double integrand =
          0.5 * (e.dot(coeffs.Q[k] * e) + u.dot(coeffs.R[k] * u));
      const double w = (k == 0 || k == steps) ? 0.5 : 1.0;
      acc += w * integrand * dt;
      if (k == steps) acc += 0.5 * e.dot(coeffs.G * e);
    }
    per_path[p] = acc;
  }

  CostEstimate est;
  est.n_paths = ens.n_paths;
  double mean = 0.0;
  for (double v : per_path) mean += v;
  mean /= static_cast<double>(ens.n_paths);
  est.mean = mean;
  if (ens.n_paths > 1) {
    double ss = 0.0;
    for (double v : per_path) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(ens.n_paths - 1);
    est.std_error = std::sqrt(var / static_cast<double>(ens.n_paths));
  }
  return est;
}

}  // namespace

CostEstimate evaluate_cost(const PathEnsemble& ens,
                           const CoefficientSet& coeffs,
                           std::size_t agent_index) {
  return cost_impl(ens, coeffs, agent_index, nullptr);
}

CostEstimate evaluate_cost_vs_reference(const PathEnsemble& ens,
                                        const CoefficientSet& coeffs,
                                        std::size_t agent_index,
                                        const VectorGrid& reference) {
  return cost_impl(ens, coeffs, agent_index, &reference);
}

}  // namespace mfg
