#include <doctest.h>

#include <cmath>
#include <mfglab/filtersim.hpp>
#include <mfglab/model.hpp>
#include <mfglab/nashlab.hpp>
#include <mfglab/riccati.hpp>

using namespace mfg;

TEST_CASE("log-log rate fit recovers exact power laws") {
  std::vector<double> xs = {5, 10, 20, 40, 80};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(3.5 * std::pow(x, -0.5));
  RateFit fit = rate_fit(xs, ys);
  CHECK(fit.slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(std::log(3.5)).epsilon(1e-10));
  CHECK(fit.std_err < 1e-10);

  for (auto& y : ys) y = 2.0 * y * y;  // squaring doubles the decay rate
  RateFit fit2 = rate_fit(xs, ys);
  CHECK(fit2.slope == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("rate fit rejects unusable inputs") {
  CHECK_THROWS_AS(rate_fit({5.0}, {1.0}), ArgumentError);
  CHECK_THROWS_AS(rate_fit({5.0, 10.0}, {1.0}), ArgumentError);
  CHECK_THROWS_AS(rate_fit({5.0, 10.0}, {1.0, -2.0}), ArgumentError);
  CHECK_THROWS_AS(rate_fit({5.0, 10.0}, {1.0, 0.0}), ArgumentError);
}

TEST_CASE("deviating to the equilibrium control gains exactly nothing") {
  TimeGrid grid{1.0, 25};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);
  FeedbackLaw law = build_feedback(sol, c);
  ControlRule eq = equilibrium_rule(law, c, ConstraintSet::full_space());
  ScalarEstimate est = deviation_test(4, eq, law, c, grid, 6, 2024);
  // Both runs traverse the same kernel with the same noise keys, so the
  // difference is exactly zero, not merely small.
  CHECK(est.value == 0.0);
  CHECK(est.std_error == 0.0);
  CHECK(est.reps == 6);
}

TEST_CASE("state consistency error shrinks with the population size") {
  TimeGrid grid{1.0, 50};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);
  FeedbackLaw law = build_feedback(sol, c);
  ScalarEstimate small = state_consistency_error(2, law, c, grid, 24, 7);
  ScalarEstimate large = state_consistency_error(64, law, c, grid, 24, 7);
  CHECK(small.value > 0.0);
  CHECK(large.value > 0.0);
  CHECK(large.value < small.value);  // ~1/N separation, 32x apart
}

TEST_CASE("cost gap is positive and finite") {
  TimeGrid grid{1.0, 50};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);
  FeedbackLaw law = build_feedback(sol, c);
  ScalarEstimate gap = cost_gap(10, law, c, grid, 16, 5);
  CHECK(gap.value > 0.0);
  CHECK(std::isfinite(gap.value));
  CHECK(std::isfinite(gap.std_error));
}

TEST_CASE("full verification program produces a coherent report") {
  TimeGrid grid{1.0, 40};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);
  FeedbackLaw law = build_feedback(sol, c);
  std::vector<std::size_t> Ns = {4, 8, 16};
  NashReport rep = run_nash_program(Ns, law, c, grid, 8, 31);

  REQUIRE(rep.population_sizes == Ns);
  REQUIRE(rep.state_errors.size() == 3);
  REQUIRE(rep.cost_gaps.size() == 3);
  REQUIRE(rep.deviation_gaps.size() == 3);
  REQUIRE(rep.epsilons.size() == 3);
  REQUIRE(rep.alternative_names.size() == 2);
  CHECK(rep.alternative_names[0] == "zero");
  CHECK(rep.alternative_names[1] == "scaled_1.5");
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::isfinite(rep.state_errors[i].value));
    CHECK(std::isfinite(rep.cost_gaps[i].value));
    CHECK(rep.epsilons[i] >= 0.0);
    REQUIRE(rep.deviation_gaps[i].size() == 2);
    for (const auto& d : rep.deviation_gaps[i]) {
      // No admissible deviation may beat the equilibrium by more than the
      // certified epsilon.
      CHECK(d.value <= rep.epsilons[i] + 1e-12);
    }
  }
  CHECK(std::isfinite(rep.state_rate.slope));
  CHECK(std::isfinite(rep.cost_rate.slope));
  CHECK(rep.seed == 31);
  CHECK(rep.reps == 8);
}
