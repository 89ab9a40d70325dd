#include <doctest.h>

#include <cmath>
#include <mfglab/model.hpp>
#include <mfglab/riccati.hpp>
#include <random>

using namespace mfg;

namespace {

// Frozen reference values produced by an independent fine-grid integrator
// (200k-step scalar RK4, cross-checked against the closed form and against
// the Pi = P + Lambda identity to 1e-12).
constexpr double kPresetP0 = 42.740058145927;
constexpr double kPresetLambda0 = 1.445543830272;
constexpr double kPresetPi0 = 44.185601976201;
constexpr double kPresetPhi0 = 28.570879687001;
constexpr double kPresetLT = 15.155775122923;

constexpr double kHalfP0 = 50.725872140003;
constexpr double kHalfPi0 = 51.179426038898;
constexpr double kHalfPhi0 = 33.559172474748;
constexpr double kHalfLT = 16.630075773366;

CoefficientSet half_scaled(const TimeGrid& grid) {
  // Preset with the control-gain and idiosyncratic control-volatility
  // channels at half strength.
  return CoefficientSet::scalar(grid, 1.7, 1.4, 0.6, 0.0, 1.0, 1.5, 2.0, 0.8,
                                0.3, 3.3, 2.5, 5.0, 1.0);
}

}  // namespace

TEST_CASE("full solve matches the independent integrator on the example") {
  TimeGrid grid{1.0, 1000};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);

  CHECK(sol.P[0](0, 0) == doctest::Approx(kPresetP0).epsilon(1e-8));
  CHECK(sol.Lambda[0](0, 0) == doctest::Approx(kPresetLambda0).epsilon(1e-7));
  CHECK(sol.Pi[0](0, 0) == doctest::Approx(kPresetPi0).epsilon(1e-8));
  CHECK(sol.Phi[0](0) == doctest::Approx(kPresetPhi0).epsilon(1e-8));
  CHECK(sol.l[grid.steps](0) == doctest::Approx(kPresetLT).epsilon(1e-8));

  // Terminal conditions are imposed exactly, not integrated.
  CHECK(sol.P[grid.steps](0, 0) == 5.0);
  CHECK(sol.Lambda[grid.steps](0, 0) == -5.0);
  CHECK(sol.Pi[grid.steps](0, 0) == 0.0);
  CHECK(sol.Phi[grid.steps](0) == 0.0);

  for (std::size_t k = 0; k <= grid.steps; ++k) {
    CHECK(std::abs(sol.Pi[k](0, 0) - (sol.P[k](0, 0) + sol.Lambda[k](0, 0))) <=
          1e-12);
  }
}

TEST_CASE("full solve matches the independent integrator at half scale") {
  TimeGrid grid{1.0, 200};
  RiccatiSolution sol = solve_riccati(half_scaled(grid), grid);
  CHECK(sol.P[0](0, 0) == doctest::Approx(kHalfP0).epsilon(1e-7));
  CHECK(sol.Pi[0](0, 0) == doctest::Approx(kHalfPi0).epsilon(1e-7));
  CHECK(sol.Phi[0](0) == doctest::Approx(kHalfPhi0).epsilon(1e-7));
  CHECK(sol.l[grid.steps](0) == doctest::Approx(kHalfLT).epsilon(1e-7));
}

TEST_CASE("Richardson order check: quartic error decay in dt") {
  // Error against a steps=3200 self-reference at steps 100/200/400; the
  // ratio of successive errors sits near 16 for a fourth-order scheme.
  TimeGrid fine{1.0, 3200};
  CoefficientSet cf = CoefficientSet::ibl_preset(fine);
  const double p_ref = solve_riccati(cf, fine).P[0](0, 0);

  double err[3];
  std::size_t steps[3] = {100, 200, 400};
  for (int i = 0; i < 3; ++i) {
    TimeGrid g{1.0, steps[i]};
    CoefficientSet c = CoefficientSet::ibl_preset(g);
    err[i] = std::abs(solve_riccati(c, g).P[0](0, 0) - p_ref);
  }
  const double r1 = err[0] / err[1];
  const double r2 = err[1] / err[2];
  CHECK(r1 >= 8.0);
  CHECK(r1 <= 32.0);
  CHECK(r2 >= 8.0);
  CHECK(r2 <= 32.0);
}

TEST_CASE("residuals certify solutions and reject corrupted grids") {
  TimeGrid grid{1.0, 400};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);

  CHECK(sol.residuals.P < 1e-5);
  CHECK(sol.residuals.Lambda < 1e-5);
  CHECK(sol.residuals.Phi < 1e-5);
  CHECK(sol.residuals.l < 1e-5);

  MatrixGrid bad = sol.P;
  for (auto& m : bad) m.array() += 0.05;  // constant offset: derivative intact
  // The offset only perturbs the algebraic part of the equation, so the
  // residual lands near 0.09 -- still four orders above the clean solve.
  CHECK(residual_P(bad, c, grid) > 1e-3);
}

TEST_CASE("iterative scheme agrees with direct integration") {
  TimeGrid grid{1.0, 400};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  MatrixGrid direct = solve_P_direct(c, grid);
  auto [iter, count] = solve_P_iterative(c, grid);
  REQUIRE(iter.size() == direct.size());
  CHECK(count <= 200);
  double gap = 0.0;
  for (std::size_t k = 0; k < iter.size(); ++k) {
    gap = std::max(gap, spectral_norm_sym(iter[k] - direct[k]));
  }
  CHECK(gap < 1e-6);
}

TEST_CASE("iterative scheme on a 2x2 configuration") {
  TimeGrid grid{1.0, 300};
  std::mt19937 gen(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rnd = [&](Eigen::Index r, Eigen::Index c2) {
    Matrix m(r, c2);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c2; ++j) m(i, j) = u(gen);
    return m;
  };
  Matrix A = rnd(2, 2), B = rnd(2, 2), C = 0.3 * rnd(2, 2), D = 0.2 * rnd(2, 2),
         Dt = 0.2 * rnd(2, 2);
  Matrix Mq = rnd(2, 2), Mg = rnd(2, 2), Mr = rnd(2, 2);
  Matrix Q = Mq.transpose() * Mq + 0.1 * Matrix::Identity(2, 2);
  Matrix G = Mg.transpose() * Mg;
  Matrix R = Mr.transpose() * Mr + 0.5 * Matrix::Identity(2, 2);
  CoefficientSet c = CoefficientSet::constant(
      grid, A, B, C, D, Dt, 0.4 * Matrix::Identity(2, 2), Vector::Zero(2),
      0.1 * Vector::Ones(2), 0.1 * Vector::Ones(2), Q, R, G, Vector::Ones(2),
      0.4);
  MatrixGrid direct = solve_P_direct(c, grid);
  auto [iter, count] = solve_P_iterative(c, grid);
  CHECK(count <= 200);
  double gap = 0.0;
  for (std::size_t k = 0; k < iter.size(); ++k) {
    gap = std::max(gap, spectral_norm_sym(iter[k] - direct[k]));
  }
  CHECK(gap < 1e-6);
  // Iterates are PSD and decrease monotonically; the solver enforces this
  // internally, so success of the call already certifies it. Spot-check PSD
  // of the result.
  for (const auto& m : iter) CHECK(min_eigenvalue(m) >= -1e-10);
}

TEST_CASE("scalar closed form") {
  ScalarClosedForm cf = closed_form_scalar_P(1.7, 0.0, 2.8, 3.3, 2.5, 5.0, 1.0);
  CHECK(cf.theta == doctest::Approx(3.638516181083).epsilon(1e-10));
  CHECK(cf.k_ratio == doctest::Approx(0.586966786115).epsilon(1e-10));
  CHECK(cf.P_of_t(1.0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(cf.P_of_t(0.0) == doctest::Approx(1.703274840370).epsilon(1e-10));

  SUBCASE("numerical solution matches the closed form everywhere") {
    TimeGrid grid{1.0, 1000};
    CoefficientSet c = CoefficientSet::scalar(grid, 1.7, 2.8, 0.0, 0.0, 0.0,
                                              1.5, 2.0, 0.8, 0.3, 3.3, 2.5,
                                              5.0, 1.0);
    RiccatiSolution sol = solve_riccati(c, grid);
    double perr = 0.0, pimax = 0.0;
    for (std::size_t k = 0; k <= grid.steps; ++k) {
      perr = std::max(perr, std::abs(sol.P[k](0, 0) - cf.P_of_t(grid.t(k))));
      pimax = std::max(pimax, std::abs(sol.Pi[k](0, 0)));
    }
    CHECK(perr < 1e-6);
    CHECK(pimax < 1e-8);  // no state noise in the cost channel: Pi vanishes

    // With the transformed equation identically zero the population average
    // obeys a plain linear ODE with rate A + delta = 3.2.
    double lerr = 0.0;
    for (std::size_t k = 0; k <= grid.steps; ++k) {
      const double t = grid.t(k);
      const double lref =
          std::exp(3.2 * t) * 1.0 + (2.0 / 3.2) * (std::exp(3.2 * t) - 1.0);
      lerr = std::max(lerr, std::abs(sol.l[k](0) - lref));
    }
    CHECK(lerr < 1e-8);
  }

  SUBCASE("degenerate cost: P vanishes identically") {
    ScalarClosedForm z = closed_form_scalar_P(1.7, 0.0, 2.8, 0.0, 2.5, 0.0, 1.0);
    CHECK(z.k_ratio == 0.0);
    CHECK(z.P_of_t(0.3) == 0.0);
  }

  SUBCASE("invalid arguments are rejected") {
    CHECK_THROWS_AS(closed_form_scalar_P(1.7, 0.0, 2.8, 3.3, 0.0, 5.0, 1.0),
                    ArgumentError);
    CHECK_THROWS_AS(closed_form_scalar_P(1.7, 0.0, 0.0, 3.3, 2.5, 5.0, 1.0),
                    ArgumentError);
  }
}

TEST_CASE("linear integrator solves a known constant-coefficient equation") {
  // Pdot + P*Ahat + Ahat^T*P + Qhat = 0 with Ahat = a*I, Chat = 0, terminal 0
  // has solution P(t) = (q / (2a)) * (exp(2a(T-t)) - 1) * I.
  TimeGrid grid{1.0, 200};
  const double a = 0.7, q = 1.3;
  MatrixGrid Ahat(grid.nodes(), a * Matrix::Identity(2, 2));
  MatrixGrid Chat(grid.nodes(), Matrix::Zero(2, 2));
  MatrixGrid Qhat(grid.nodes(), q * Matrix::Identity(2, 2));
  MatrixGrid P = integrate_lyapunov(Ahat, Chat, Qhat, Matrix::Zero(2, 2), grid);
  double err = 0.0;
  for (std::size_t k = 0; k <= grid.steps; ++k) {
    const double ref =
        q / (2.0 * a) * (std::exp(2.0 * a * (1.0 - grid.t(k))) - 1.0);
    err = std::max(err,
                   (P[k] - ref * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff());
  }
  CHECK(err < 1e-9);
}
