#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfglab/filtersim.hpp"
#include "mfglab/model.hpp"
#include "mfglab/types.hpp"

namespace mfg {

struct ScalarEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t reps = 0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double std_err = 0.0;  // standard error of the slope
};

// Monte-Carlo verification report for the approximate-equilibrium program:
// decay of the population/limit state gap, decay of the cost gap, and
// deviation tests against a library of admissible alternative strategies.
struct NashReport {
  std::vector<std::size_t> population_sizes;
  std::vector<ScalarEstimate> state_errors;  // E sup_t |xbar^N - l|^2 per N
  std::vector<ScalarEstimate> cost_gaps;     // |J^N_1 - J_1| per N
  std::vector<std::string> alternative_names;
  // deviation_gaps[N index][alt index]: J^N_1(eq) - J^N_1(alt, eq others)
  std::vector<std::vector<ScalarEstimate>> deviation_gaps;
  std::vector<double> epsilons;  // per N: max(0, best gain) + 2 SE
  RateFit state_rate;            // log-log fit of state_errors vs N
  RateFit cost_rate;             // log-log fit of cost_gaps vs N
  std::uint64_t seed = 0;
  std::size_t reps = 0;
};

// Average over `reps` independent population draws of the pathwise
// sup-over-grid of |xbar^(N)(t) - l(t)|^2.
ScalarEstimate state_consistency_error(std::size_t N, const FeedbackLaw& law,
                                       const CoefficientSet& coeffs,
                                       const TimeGrid& grid, std::size_t reps,
                                       std::uint64_t seed,
                                       const ConstraintSet& gamma =
                                           ConstraintSet{});

// Mean over reps of the pathwise absolute difference between agent 1's
// N-agent cost and its limiting cost, the two systems sharing all noise.
ScalarEstimate cost_gap(std::size_t N, const FeedbackLaw& law,
                        const CoefficientSet& coeffs, const TimeGrid& grid,
                        std::size_t reps, std::uint64_t seed,
                        const ConstraintSet& gamma = ConstraintSet{});

// Common-random-number estimate of J^N_1(equilibrium) - J^N_1(alt,
// equilibrium others): a positive value is the gain agent 1 realizes by
// deviating to `alt`. With alt equal to the equilibrium rule the result is
// exactly zero pathwise.
ScalarEstimate deviation_test(std::size_t N, const ControlRule& alt,
                              const FeedbackLaw& law,
                              const CoefficientSet& coeffs,
                              const TimeGrid& grid, std::size_t reps,
                              std::uint64_t seed,
                              const ConstraintSet& gamma = ConstraintSet{});

// The equilibrium feedback packaged as a ControlRule (projected onto gamma).
ControlRule equilibrium_rule(const FeedbackLaw& law,
                             const CoefficientSet& coeffs,
                             const ConstraintSet& gamma);

// Ordinary least squares on (log x, log y); requires >= 3 strictly positive
// points.
RateFit rate_fit(const std::vector<double>& xs, const std::vector<double>& ys);

// Full program over a grid of population sizes, with the built-in deviation
// library {zero control, feedback scaled by 1.5} (both projected onto gamma
// so they stay admissible).
NashReport run_nash_program(const std::vector<std::size_t>& N_grid,
                            const FeedbackLaw& law,
                            const CoefficientSet& coeffs, const TimeGrid& grid,
                            std::size_t reps, std::uint64_t seed,
                            const ConstraintSet& gamma = ConstraintSet{});

}  // namespace mfg
