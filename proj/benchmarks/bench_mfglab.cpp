#include <benchmark/benchmark.h>

#include <mfglab/fbsde.hpp>
#include <mfglab/filtersim.hpp>
#include <mfglab/model.hpp>
#include <mfglab/riccati.hpp>
#include <random>

using namespace mfg;

static void BM_RiccatiSolve(benchmark::State& state) {
  TimeGrid grid{1.0, static_cast<std::size_t>(state.range(0))};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  for (auto _ : state) {
    RiccatiSolution sol = solve_riccati(c, grid);
    benchmark::DoNotOptimize(sol.P[0](0, 0));
  }
}
BENCHMARK(BM_RiccatiSolve)->Arg(200)->Arg(1000);

static void BM_IterativeP(benchmark::State& state) {
  TimeGrid grid{1.0, 400};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  for (auto _ : state) {
    auto [p, iters] = solve_P_iterative(c, grid);
    benchmark::DoNotOptimize(p[0](0, 0));
    benchmark::DoNotOptimize(iters);
  }
}
BENCHMARK(BM_IterativeP);

static void BM_FilterSimulation(benchmark::State& state) {
  TimeGrid grid{1.0, 200};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);
  FeedbackLaw law = build_feedback(sol, c);
  const auto paths = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    PathEnsemble ens = simulate_filter(law, c, grid, paths, 7);
    benchmark::DoNotOptimize(ens.filters[0].back()(0, 0));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(paths) *
                          static_cast<std::int64_t>(grid.steps));
}
BENCHMARK(BM_FilterSimulation)->Arg(1000)->Arg(10000);

static void BM_PopulationStep(benchmark::State& state) {
  TimeGrid grid{1.0, 100};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);
  FeedbackLaw law = build_feedback(sol, c);
  const auto N = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    PathEnsemble ens = simulate_population(N, law, c, grid, 8, 7);
    benchmark::DoNotOptimize(ens.states[0].back()(0, 0));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(N) * 8 *
                          static_cast<std::int64_t>(grid.steps));
}
BENCHMARK(BM_PopulationStep)->Arg(20)->Arg(160);

static void BM_ConditionalRegression(benchmark::State& state) {
  const auto P = static_cast<Eigen::Index>(state.range(0));
  std::mt19937 gen(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix features(4, P);
  features.row(0).setOnes();
  for (Eigen::Index p = 0; p < P; ++p) {
    features(1, p) = nd(gen);
    features(2, p) = features(1, p) * features(1, p);
    features(3, p) = nd(gen);
  }
  Matrix values = 3.0 * features.row(1) + 0.5 * features.row(3);
  for (auto _ : state) {
    RegressionModel model = regress_conditional(values, features, 1e-8);
    benchmark::DoNotOptimize(model.coef(0, 0));
  }
}
BENCHMARK(BM_ConditionalRegression)->Arg(1000)->Arg(10000);

static void BM_PicardSweep(benchmark::State& state) {
  // One forward + one backward sweep, the unit of work inside the damped
  // fixed-point loop.
  TimeGrid grid{1.0, 200};
  CoefficientSet c = CoefficientSet::scalar(grid, 1.7, 1.4, 0.6, 0.0, 1.0, 1.5,
                                            2.0, 0.8, 0.3, 3.3, 2.5, 5.0, 1.0);
  MFFBSDEProblem pb = assemble_cc_system(c, grid, ConstraintSet::full_space());
  NoisePaths noise =
      generate_noise(grid, static_cast<std::size_t>(state.range(0)), 3);
  FBSDEState prev;
  for (auto _ : state) {
    ForwardPaths fwd = solve_forward(pb, grid, prev, noise);
    BackwardPaths bwd = solve_backward(pb, grid, fwd, noise, 1e-8, 2);
    benchmark::DoNotOptimize(bwd.Y[0](0, 0));
  }
}
BENCHMARK(BM_PicardSweep)->Arg(2000)->Arg(10000);

BENCHMARK_MAIN();
