#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mfglab/model.hpp"
#include "mfglab/riccati.hpp"
#include "mfglab/types.hpp"

namespace mfg {

// Decentralized affine feedback synthesized from the Riccati pass:
//   u(t) = K(t) zhat + K_l(t) l(t) + c_off(t),
// optionally projected onto the admissible set in the R-weighted norm.
struct FeedbackLaw {
  MatrixGrid K;      // m x n gains, -Rtilde^-1 Ptilde^T
  MatrixGrid K_l;    // m x n gains against the population average
  VectorGrid c_off;  // m-vector offsets
  VectorGrid l_ref;  // n-vector reference trajectory (population limit)

  std::size_t nodes() const { return K.size(); }
};

// Simulation output. Per agent and per node the ensemble stores an
// n x n_paths matrix whose column p is the value on path p; this keeps
// 10^4-path runs in a handful of contiguous buffers.
struct PathEnsemble {
  std::size_t n_agents = 0;
  std::size_t n_paths = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::vector<Matrix>> states;    // [agent][node], n x n_paths
  std::vector<std::vector<Matrix>> filters;   // [agent][node], n x n_paths
  std::vector<std::vector<Matrix>> controls;  // [agent][node], m x n_paths

  std::size_t nodes() const {
    if (!states.empty()) return states.front().size();
    if (!filters.empty()) return filters.front().size();
    return 0;
  }
};

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
};

// Nodewise gains from the Riccati solution. Throws InvariantError if any
// Rtilde factorization fails (singularity is reported, not regularized).
FeedbackLaw build_feedback(const RiccatiSolution& sol,
                           const CoefficientSet& coeffs);

// Feedback value before any constraint projection.
Vector feedback_control(const FeedbackLaw& law, std::size_t k,
                        const Vector& zhat);

// Feedback value projected onto gamma in the R(t_k)-weighted norm.
Vector constrained_control(const FeedbackLaw& law, const ConstraintSet& gamma,
                           const CoefficientSet& coeffs, std::size_t k,
                           const Vector& zhat);

// Euler-Maruyama paths of the filtered state zhat alone, one agent, driven
// by per-path independent observable increments; zhat(0) = x0. The returned
// ensemble fills `filters` and `controls`, leaving `states` empty.
PathEnsemble simulate_filter(const FeedbackLaw& law,
                             const CoefficientSet& coeffs,
                             const TimeGrid& grid, std::size_t n_paths,
                             std::uint64_t seed,
                             const ConstraintSet& gamma = ConstraintSet{});

// Joint Euler-Maruyama simulation of all N true states (each with its own
// observable and unobservable noise) plus companion filters; controls are
// evaluated from (zhat_i, l_ref) and the state average is recomputed from
// the simulated population at every step.
//
// `rep` offsets the noise keys so repeated experiments draw independent
// streams; `agent_keys`, when non-empty, maps agent slot i to the noise
// stream of agent_keys[i] (used to exercise exchangeability).
PathEnsemble simulate_population(std::size_t N, const FeedbackLaw& law,
                                 const CoefficientSet& coeffs,
                                 const TimeGrid& grid, std::size_t n_paths,
                                 std::uint64_t seed,
                                 const ConstraintSet& gamma = ConstraintSet{},
                                 std::uint64_t rep = 0,
                                 const std::vector<std::uint64_t>& agent_keys =
                                     {});

// As simulate_population, but agent 1 (slot 0) applies `alt` instead of the
// equilibrium feedback; alt receives (node index, own filter, l(t_k)) and
// must return a gamma-admissible control. Used by the deviation tests.
using ControlRule = std::function<Vector(std::size_t, const Vector&,
                                         const Vector&)>;
PathEnsemble simulate_population_deviating(
    std::size_t N, const FeedbackLaw& law, const ControlRule& alt,
    const CoefficientSet& coeffs, const TimeGrid& grid, std::size_t n_paths,
    std::uint64_t seed, const ConstraintSet& gamma = ConstraintSet{},
    std::uint64_t rep = 0);

// Couples to simulate_population through the noise keys alone: simulates,
// for a single agent id, the filter zhat (driving noise identical to the
// population run at the same seed/rep) together with the limiting state
// whose dynamics replace the population average by l_ref. Filters, controls
// and the W-driven randomness coincide bitwise with the population run, so
// cost comparisons against it share noise pathwise.
PathEnsemble simulate_limit_agent(const FeedbackLaw& law,
                                  const CoefficientSet& coeffs,
                                  const TimeGrid& grid, std::size_t n_paths,
                                  std::uint64_t seed,
                                  const ConstraintSet& gamma = ConstraintSet{},
                                  std::uint64_t rep = 0,
                                  std::uint64_t agent = 0);

// Monte-Carlo cost of one agent against the simulated population average:
// trapezoidal running cost plus terminal cost, factor 1/2, mean and
// standard error across paths.
CostEstimate evaluate_cost(const PathEnsemble& ens,
                           const CoefficientSet& coeffs,
                           std::size_t agent_index);

// Same quadrature but measuring the agent against a deterministic reference
// trajectory instead of the population average (the limiting-problem cost).
CostEstimate evaluate_cost_vs_reference(const PathEnsemble& ens,
                                        const CoefficientSet& coeffs,
                                        std::size_t agent_index,
                                        const VectorGrid& reference);

}  // namespace mfg
