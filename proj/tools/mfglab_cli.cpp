// mfglab command-line driver.
//
// Subcommands:
//   validate     check a model configuration against the standing assumptions
//   riccati      solve the decentralized-feedback matrix ODE system, write riccati.csv
//   simulate     run filtered-state and population simulations under the feedback law
//   fbsde        run the projected mean-field FBSDE Picard/LSMC solver
//   nash         run the epsilon-Nash verification program over a population grid
//   example-ibl  canned inter-bank lending example (riccati + sample paths + D-tilde sweep)
//
// Exit codes: 0 success, 2 argument/schema/validation error, 3 solver
// non-convergence, 4 invariant breach.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <mfglab/fbsde.hpp>
#include <mfglab/filtersim.hpp>
#include <mfglab/io.hpp>
#include <mfglab/model.hpp>
#include <mfglab/nashlab.hpp>
#include <mfglab/riccati.hpp>
#include <mfglab/types.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Effective run configuration (JSON config + command-line overrides applied).
// ---------------------------------------------------------------------------

struct RunConfig {
  // model
  bool use_preset = false;
  double dtilde = 2.0;          // preset coupling strength for the idiosyncratic channel
  std::size_t n = 1, m = 1;
  json model_raw;               // explicit coefficient entries (already schema-checked)
  // grid
  double T = 1.0;
  std::size_t steps = 100;
  // constraint
  std::string constraint_kind = "full_space";
  std::vector<double> lower, upper;
  // solver
  double tol = 1e-6;
  std::size_t max_iter = 50;
  double lambda = 0.0;
  std::size_t basis_degree = 2;
  double ridge = 1e-8;
  double relaxation = 1.0;
  std::string p_method = "direct";
  double iter_tol = 1e-10;
  std::size_t iter_max = 200;
  // monte carlo
  std::size_t n_paths = 1000;
  std::size_t reps = 64;
  std::optional<std::uint64_t> seed;
  std::size_t N = 20;
  std::vector<std::size_t> N_grid = {5, 10, 20, 40, 80, 160};
  // output
  std::string out_dir = "out";
  // optional default subcommand stored in the config file
  std::string experiment;
};

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& section) {
  if (!j.is_object()) {
    throw mfg::ArgumentError("config section '" + section + "' must be a JSON object");
  }
  for (const auto& item : j.items()) {
    if (allowed.find(item.key()) == allowed.end()) {
      throw mfg::ArgumentError("unknown key '" + item.key() + "' in config section '" +
                               section + "'");
    }
  }
}

double need_number(const json& j, const std::string& where) {
  if (!j.is_number()) {
    throw mfg::ArgumentError("expected a number for '" + where + "'");
  }
  return j.get<double>();
}

std::size_t need_count(const json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
    throw mfg::ArgumentError("expected a non-negative integer for '" + where + "'");
  }
  return j.get<std::size_t>();
}

// Accepts a scalar (broadcast), a flat array (row-major), or nested arrays.
mfg::Matrix parse_matrix(const json& j, std::size_t rows, std::size_t cols,
                         const std::string& where) {
  mfg::Matrix out = mfg::Matrix::Zero(static_cast<Eigen::Index>(rows),
                                      static_cast<Eigen::Index>(cols));
  if (j.is_number()) {
    if (rows == cols) {
      out = j.get<double>() *
            mfg::Matrix::Identity(static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(cols));
    } else {
      out.setConstant(j.get<double>());
    }
    return out;
  }
  if (!j.is_array()) {
    throw mfg::ArgumentError("expected number or array for '" + where + "'");
  }
  if (!j.empty() && j.front().is_array()) {
    if (j.size() != rows) {
      throw mfg::ArgumentError("'" + where + "' has wrong row count");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (!j[r].is_array() || j[r].size() != cols) {
        throw mfg::ArgumentError("'" + where + "' has wrong column count in row " +
                                 std::to_string(r));
      }
      for (std::size_t c = 0; c < cols; ++c) {
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            need_number(j[r][c], where);
      }
    }
    return out;
  }
  if (j.size() != rows * cols) {
    throw mfg::ArgumentError("'" + where + "' has " + std::to_string(j.size()) +
                             " entries, expected " + std::to_string(rows * cols));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          need_number(j[r * cols + c], where);
    }
  }
  return out;
}

mfg::Vector parse_vector(const json& j, std::size_t n, const std::string& where) {
  mfg::Vector out = mfg::Vector::Zero(static_cast<Eigen::Index>(n));
  if (j.is_number()) {
    out.setConstant(j.get<double>());
    return out;
  }
  if (!j.is_array() || j.size() != n) {
    throw mfg::ArgumentError("expected number or array of length " + std::to_string(n) +
                             " for '" + where + "'");
  }
  for (std::size_t i = 0; i < n; ++i) {
    out(static_cast<Eigen::Index>(i)) = need_number(j[i], where);
  }
  return out;
}

RunConfig parse_config(const json& root) {
  check_keys(root, {"model", "grid", "constraint", "solver", "monte_carlo", "output",
                    "experiment"},
             "<top level>");
  RunConfig cfg;

  if (root.contains("model")) {
    const json& mj = root.at("model");
    check_keys(mj,
               {"preset", "dtilde", "n", "m", "A", "B", "C", "D", "Dt", "delta", "b",
                "sigma", "sigmat", "Q", "R", "G", "x0", "kappa"},
               "model");
    if (mj.contains("preset")) {
      const std::string preset = mj.at("preset").get<std::string>();
      if (preset != "ibl") {
        throw mfg::ArgumentError("unknown model preset '" + preset + "'");
      }
      cfg.use_preset = true;
      if (mj.contains("dtilde")) cfg.dtilde = need_number(mj.at("dtilde"), "model.dtilde");
      for (const auto& item : mj.items()) {
        if (item.key() != "preset" && item.key() != "dtilde") {
          throw mfg::ArgumentError("key '" + item.key() +
                                   "' is not allowed together with model.preset");
        }
      }
    } else {
      if (mj.contains("n")) cfg.n = need_count(mj.at("n"), "model.n");
      if (mj.contains("m")) cfg.m = need_count(mj.at("m"), "model.m");
      if (cfg.n == 0 || cfg.m == 0) {
        throw mfg::ArgumentError("model.n and model.m must be positive");
      }
      cfg.model_raw = mj;
    }
  } else {
    cfg.use_preset = true;  // default model is the canned example
  }

  if (root.contains("grid")) {
    const json& gj = root.at("grid");
    check_keys(gj, {"T", "steps"}, "grid");
    if (gj.contains("T")) cfg.T = need_number(gj.at("T"), "grid.T");
    if (gj.contains("steps")) cfg.steps = need_count(gj.at("steps"), "grid.steps");
  }

  if (root.contains("constraint")) {
    const json& cj = root.at("constraint");
    check_keys(cj, {"kind", "lower", "upper"}, "constraint");
    if (cj.contains("kind")) cfg.constraint_kind = cj.at("kind").get<std::string>();
    if (cj.contains("lower")) {
      for (const auto& v : cj.at("lower")) cfg.lower.push_back(need_number(v, "constraint.lower"));
    }
    if (cj.contains("upper")) {
      for (const auto& v : cj.at("upper")) cfg.upper.push_back(need_number(v, "constraint.upper"));
    }
  }

  if (root.contains("solver")) {
    const json& sj = root.at("solver");
    check_keys(sj,
               {"tol", "max_iter", "lambda", "basis_degree", "ridge", "relaxation",
                "p_method", "iter_tol", "iter_max"},
               "solver");
    if (sj.contains("tol")) cfg.tol = need_number(sj.at("tol"), "solver.tol");
    if (sj.contains("max_iter")) cfg.max_iter = need_count(sj.at("max_iter"), "solver.max_iter");
    if (sj.contains("lambda")) cfg.lambda = need_number(sj.at("lambda"), "solver.lambda");
    if (sj.contains("basis_degree"))
      cfg.basis_degree = need_count(sj.at("basis_degree"), "solver.basis_degree");
    if (sj.contains("ridge")) cfg.ridge = need_number(sj.at("ridge"), "solver.ridge");
    if (sj.contains("relaxation"))
      cfg.relaxation = need_number(sj.at("relaxation"), "solver.relaxation");
    if (sj.contains("p_method")) cfg.p_method = sj.at("p_method").get<std::string>();
    if (sj.contains("iter_tol")) cfg.iter_tol = need_number(sj.at("iter_tol"), "solver.iter_tol");
    if (sj.contains("iter_max")) cfg.iter_max = need_count(sj.at("iter_max"), "solver.iter_max");
  }

  if (root.contains("monte_carlo")) {
    const json& mc = root.at("monte_carlo");
    check_keys(mc, {"n_paths", "reps", "seed", "N", "N_grid"}, "monte_carlo");
    if (mc.contains("n_paths")) cfg.n_paths = need_count(mc.at("n_paths"), "monte_carlo.n_paths");
    if (mc.contains("reps")) cfg.reps = need_count(mc.at("reps"), "monte_carlo.reps");
    if (mc.contains("seed")) cfg.seed = mc.at("seed").get<std::uint64_t>();
    if (mc.contains("N")) cfg.N = need_count(mc.at("N"), "monte_carlo.N");
    if (mc.contains("N_grid")) {
      cfg.N_grid.clear();
      for (const auto& v : mc.at("N_grid")) cfg.N_grid.push_back(need_count(v, "monte_carlo.N_grid"));
    }
  }

  if (root.contains("output")) {
    const json& oj = root.at("output");
    check_keys(oj, {"dir"}, "output");
    if (oj.contains("dir")) cfg.out_dir = oj.at("dir").get<std::string>();
  }

  if (root.contains("experiment")) {
    cfg.experiment = root.at("experiment").get<std::string>();
  }

  if (cfg.p_method != "direct" && cfg.p_method != "iterative") {
    throw mfg::ArgumentError("solver.p_method must be 'direct' or 'iterative'");
  }
  if (cfg.constraint_kind != "full_space" && cfg.constraint_kind != "nonnegative" &&
      cfg.constraint_kind != "box") {
    throw mfg::ArgumentError(
        "constraint.kind must be 'full_space', 'nonnegative', or 'box'");
  }
  return cfg;
}

mfg::ConstraintSet build_constraint(const RunConfig& cfg) {
  if (cfg.constraint_kind == "nonnegative") {
    return mfg::ConstraintSet::nonnegative_orthant();
  }
  if (cfg.constraint_kind == "box") {
    const std::size_t m = cfg.m;
    mfg::Vector lo = mfg::Vector::Constant(static_cast<Eigen::Index>(m),
                                           -std::numeric_limits<double>::infinity());
    mfg::Vector up = mfg::Vector::Constant(static_cast<Eigen::Index>(m),
                                           std::numeric_limits<double>::infinity());
    if (!cfg.lower.empty()) lo = parse_vector(json(cfg.lower), m, "constraint.lower");
    if (!cfg.upper.empty()) up = parse_vector(json(cfg.upper), m, "constraint.upper");
    return mfg::ConstraintSet::box(lo, up);
  }
  return mfg::ConstraintSet::full_space();
}

mfg::CoefficientSet build_coeffs(const RunConfig& cfg, const mfg::TimeGrid& grid) {
  if (cfg.use_preset) {
    return mfg::CoefficientSet::ibl_preset(grid, cfg.dtilde);
  }
  const std::size_t n = cfg.n, m = cfg.m;
  const json& mj = cfg.model_raw;
  auto mat = [&](const char* key, std::size_t r, std::size_t c) {
    if (mj.contains(key)) return parse_matrix(mj.at(key), r, c, std::string("model.") + key);
    return mfg::Matrix::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))
        .eval();
  };
  auto vec = [&](const char* key, std::size_t r) {
    if (mj.contains(key)) return parse_vector(mj.at(key), r, std::string("model.") + key);
    return mfg::Vector::Zero(static_cast<Eigen::Index>(r)).eval();
  };
  const double delta = mj.contains("delta") ? need_number(mj.at("delta"), "model.delta") : 0.0;
  mfg::CoefficientSet coeffs = mfg::CoefficientSet::constant(
      grid, mat("A", n, n), mat("B", n, m), mat("C", n, n), mat("D", n, m),
      mat("Dt", n, m), delta * mfg::Matrix::Identity(static_cast<Eigen::Index>(n),
                                                     static_cast<Eigen::Index>(n)),
      vec("b", n), vec("sigma", n), vec("sigmat", n), mat("Q", n, n), mat("R", m, m),
      mat("G", n, n), vec("x0", n), delta);
  if (mj.contains("kappa")) coeffs.kappa = need_number(mj.at("kappa"), "model.kappa");
  return coeffs;
}

// Canonical JSON of the effective configuration; hashed into every artifact header.
json effective_json(const RunConfig& cfg) {
  json j;
  if (cfg.use_preset) {
    j["model"] = {{"preset", "ibl"}, {"dtilde", cfg.dtilde}};
  } else {
    j["model"] = cfg.model_raw;
  }
  j["grid"] = {{"T", cfg.T}, {"steps", cfg.steps}};
  j["constraint"] = {{"kind", cfg.constraint_kind}, {"lower", cfg.lower}, {"upper", cfg.upper}};
  j["solver"] = {{"tol", cfg.tol},
                 {"max_iter", cfg.max_iter},
                 {"lambda", cfg.lambda},
                 {"basis_degree", cfg.basis_degree},
                 {"ridge", cfg.ridge},
                 {"relaxation", cfg.relaxation},
                 {"p_method", cfg.p_method},
                 {"iter_tol", cfg.iter_tol},
                 {"iter_max", cfg.iter_max}};
  j["monte_carlo"] = {{"n_paths", cfg.n_paths},
                      {"reps", cfg.reps},
                      {"seed", cfg.seed.value_or(0)},
                      {"N", cfg.N},
                      {"N_grid", cfg.N_grid}};
  return j;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  return mfg::io::fnv1a64(effective_json(cfg).dump());
}

void report_artifact(const fs::path& p) { std::cout << "wrote " << p.string() << "\n"; }

std::uint64_t require_seed(const RunConfig& cfg, const std::string& what) {
  if (!cfg.seed) {
    throw mfg::ArgumentError("a Monte Carlo seed is mandatory for '" + what +
                             "'; set monte_carlo.seed or pass --seed");
  }
  return *cfg.seed;
}

// ---------------------------------------------------------------------------
// Subcommand bodies.
// ---------------------------------------------------------------------------

int run_validate(const RunConfig& cfg) {
  const mfg::TimeGrid grid{cfg.T, cfg.steps};
  const mfg::CoefficientSet coeffs = build_coeffs(cfg, grid);
  const mfg::ValidationReport report = mfg::validate(coeffs, grid);

  json body;
  body["config_hash"] = config_hash(cfg);
  body["seed"] = cfg.seed.value_or(0);
  body["h1_ok"] = report.h1_ok;
  body["h2_ok"] = report.h2_ok;
  body["h3_ok"] = report.h3_ok;
  body["lambda_star"] = report.lambda_star;
  body["theorem33_ok"] = report.theorem33_ok;
  body["messages"] = report.messages;

  const fs::path out = fs::path(cfg.out_dir) / "validation.json";
  mfg::io::write_file_atomic(
      out.string(), mfg::io::metadata_header(config_hash(cfg), cfg.seed.value_or(0)) +
               body.dump(2) + "\n");
  report_artifact(out);

  for (const auto& msg : report.messages) std::cout << msg << "\n";
  std::cout << "h1_ok=" << (report.h1_ok ? "true" : "false")
            << " h2_ok=" << (report.h2_ok ? "true" : "false")
            << " h3_ok=" << (report.h3_ok ? "true" : "false")
            << " lambda_star=" << report.lambda_star
            << " theorem33_ok=" << (report.theorem33_ok ? "true" : "false") << "\n";
  if (!report.h1_ok || !report.h2_ok || !report.h3_ok) {
    std::cerr << "error: model fails standing assumptions\n";
    return 2;
  }
  return 0;
}

mfg::RiccatiOptions solver_options(const RunConfig& cfg) {
  mfg::RiccatiOptions opts;
  opts.p_method = (cfg.p_method == "iterative")
                      ? mfg::RiccatiOptions::PMethod::Iterative
                      : mfg::RiccatiOptions::PMethod::Direct;
  opts.iter_tol = cfg.iter_tol;
  opts.max_iter = cfg.iter_max;
  return opts;
}

int run_riccati(const RunConfig& cfg) {
  const mfg::TimeGrid grid{cfg.T, cfg.steps};
  const mfg::CoefficientSet coeffs = build_coeffs(cfg, grid);
  const mfg::RiccatiSolution sol = mfg::solve_riccati(coeffs, grid, solver_options(cfg));

  const fs::path out = fs::path(cfg.out_dir) / "riccati.csv";
  mfg::io::write_file_atomic(
      out.string(), mfg::io::metadata_header(config_hash(cfg), cfg.seed.value_or(0)) +
               mfg::io::riccati_csv(sol, grid));
  report_artifact(out);
  std::cout << "residuals: P=" << sol.residuals.P << " Lambda=" << sol.residuals.Lambda
            << " Phi=" << sol.residuals.Phi << " l=" << sol.residuals.l << "\n";
  return 0;
}

int run_simulate(const RunConfig& cfg) {
  const std::uint64_t seed = require_seed(cfg, "simulate");
  const mfg::TimeGrid grid{cfg.T, cfg.steps};
  const mfg::CoefficientSet coeffs = build_coeffs(cfg, grid);
  const mfg::ConstraintSet gamma = build_constraint(cfg);
  const mfg::RiccatiSolution sol = mfg::solve_riccati(coeffs, grid, solver_options(cfg));
  const mfg::FeedbackLaw law = mfg::build_feedback(sol, coeffs);

  const std::string header = mfg::io::metadata_header(config_hash(cfg), seed);

  const mfg::PathEnsemble filt =
      mfg::simulate_filter(law, coeffs, grid, cfg.n_paths, seed, gamma);
  const fs::path paths_out = fs::path(cfg.out_dir) / "sample_paths.csv";
  mfg::io::write_file_atomic(paths_out.string(), header + mfg::io::sample_paths_csv(filt, 0, 20, grid));
  report_artifact(paths_out);
  const fs::path fsum_out = fs::path(cfg.out_dir) / "filter_summary.csv";
  mfg::io::write_file_atomic(fsum_out.string(), header + mfg::io::filter_summary_csv(filt, grid));
  report_artifact(fsum_out);

  const mfg::PathEnsemble pop =
      mfg::simulate_population(cfg.N, law, coeffs, grid, cfg.n_paths, seed, gamma);
  const fs::path psum_out = fs::path(cfg.out_dir) / "population_summary.csv";
  mfg::io::write_file_atomic(psum_out.string(), header + mfg::io::population_summary_csv(pop, grid));
  report_artifact(psum_out);

  const mfg::CostEstimate cost = mfg::evaluate_cost(pop, coeffs, 0);
  std::cout << "agent-0 cost: " << cost.mean << " +/- " << cost.std_error << " ("
            << cost.n_paths << " paths, N=" << cfg.N << ")\n";
  return 0;
}

int run_fbsde(const RunConfig& cfg) {
  const std::uint64_t seed = require_seed(cfg, "fbsde");
  const mfg::TimeGrid grid{cfg.T, cfg.steps};
  const mfg::CoefficientSet coeffs = build_coeffs(cfg, grid);
  const mfg::ConstraintSet gamma = build_constraint(cfg);
  const mfg::MFFBSDEProblem problem = mfg::assemble_cc_system(coeffs, grid, gamma);

  mfg::PicardOptions opts;
  opts.lambda = cfg.lambda;
  opts.tol = cfg.tol;
  opts.max_iter = cfg.max_iter;
  opts.n_paths = cfg.n_paths;
  opts.seed = seed;
  opts.ridge = cfg.ridge;
  opts.basis_degree = cfg.basis_degree;
  opts.relaxation = cfg.relaxation;

  const std::string header = mfg::io::metadata_header(config_hash(cfg), seed);
  const fs::path diag_out = fs::path(cfg.out_dir) / "fbsde_diagnostics.csv";

  mfg::FBSDEState state;
  mfg::ContractionDiagnostics diag;
  try {
    std::tie(state, diag) = mfg::picard_solve(problem, grid, opts);
  } catch (const mfg::NonConvergenceError& e) {
    mfg::io::write_file_atomic(diag_out.string(), header + mfg::io::ratio_history_csv(e.ratio_history));
    report_artifact(diag_out);
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }

  mfg::io::write_file_atomic(diag_out.string(), header + mfg::io::picard_diagnostics_csv(
                         state.diffY_history, state.diffZ_history,
                         state.diffZt_history, state.ratio_history));
  report_artifact(diag_out);
  const fs::path sum_out = fs::path(cfg.out_dir) / "fbsde_summary.csv";
  mfg::io::write_file_atomic(sum_out.string(), header + mfg::io::fbsde_summary_csv(state, grid));
  report_artifact(sum_out);

  std::cout << "picard converged in " << state.iterations << " iterations; final diff="
            << state.diff_history.back() << " observed_ratio=" << diag.observed_ratio
            << "\n";
  return 0;
}

int run_nash(const RunConfig& cfg) {
  const std::uint64_t seed = require_seed(cfg, "nash");
  const mfg::TimeGrid grid{cfg.T, cfg.steps};
  const mfg::CoefficientSet coeffs = build_coeffs(cfg, grid);
  const mfg::ConstraintSet gamma = build_constraint(cfg);
  const mfg::RiccatiSolution sol = mfg::solve_riccati(coeffs, grid, solver_options(cfg));
  const mfg::FeedbackLaw law = mfg::build_feedback(sol, coeffs);

  const mfg::NashReport report =
      mfg::run_nash_program(cfg.N_grid, law, coeffs, grid, cfg.reps, seed, gamma);

  const std::string header = mfg::io::metadata_header(config_hash(cfg), seed);
  const fs::path json_out = fs::path(cfg.out_dir) / "nash_report.json";
  mfg::io::write_file_atomic(
      json_out, header + mfg::io::nash_report_json(report, config_hash(cfg)));
  report_artifact(json_out);
  const fs::path csv_out = fs::path(cfg.out_dir) / "nash_report.csv";
  mfg::io::write_file_atomic(csv_out.string(), header + mfg::io::nash_report_csv(report));
  report_artifact(csv_out);

  std::cout << "state-consistency slope: " << report.state_rate.slope << " +/- "
            << report.state_rate.std_err << "\n";
  std::cout << "cost-gap slope: " << report.cost_rate.slope << " +/- "
            << report.cost_rate.std_err << "\n";
  return 0;
}

int run_example(const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  cfg.use_preset = true;
  if (!cfg.seed) cfg.seed = 42;
  const std::uint64_t seed = *cfg.seed;
  const mfg::TimeGrid grid{cfg.T, cfg.steps};

  // Riccati sweep at the requested coupling strength.
  {
    const mfg::CoefficientSet coeffs = mfg::CoefficientSet::ibl_preset(grid, cfg.dtilde);
    const mfg::RiccatiSolution sol = mfg::solve_riccati(coeffs, grid, solver_options(cfg));
    const mfg::FeedbackLaw law = mfg::build_feedback(sol, coeffs);
    const std::string header = mfg::io::metadata_header(config_hash(cfg), seed);

    const fs::path ric_out = fs::path(cfg.out_dir) / "riccati.csv";
    mfg::io::write_file_atomic(ric_out.string(), header + mfg::io::riccati_csv(sol, grid));
    report_artifact(ric_out);

    const mfg::PathEnsemble filt =
        mfg::simulate_filter(law, coeffs, grid, cfg.n_paths, seed);
    const fs::path paths_out = fs::path(cfg.out_dir) / "sample_paths.csv";
    mfg::io::write_file_atomic(paths_out.string(),
                               header + mfg::io::sample_paths_csv(filt, 0, 20, grid));
    report_artifact(paths_out);
  }

  // Population summaries at the two canonical idiosyncratic-volatility levels.
  double mean_u[2] = {0, 0}, mean_z[2] = {0, 0};
  const double levels[2] = {2.0, 6.0};
  for (int i = 0; i < 2; ++i) {
    RunConfig level_cfg = cfg;
    level_cfg.dtilde = levels[i];
    const mfg::CoefficientSet coeffs = mfg::CoefficientSet::ibl_preset(grid, levels[i]);
    const mfg::RiccatiSolution sol = mfg::solve_riccati(coeffs, grid, solver_options(cfg));
    const mfg::FeedbackLaw law = mfg::build_feedback(sol, coeffs);
    const mfg::PathEnsemble filt =
        mfg::simulate_filter(law, coeffs, grid, cfg.n_paths, seed);
    const std::string header = mfg::io::metadata_header(config_hash(level_cfg), seed);
    std::ostringstream name;
    name << "filter_summary_dtilde" << levels[i] << ".csv";
    const fs::path out = fs::path(cfg.out_dir) / name.str();
    mfg::io::write_file_atomic(out.string(), header + mfg::io::filter_summary_csv(filt, grid));
    report_artifact(out);

    double su = 0, sz = 0;
    for (std::size_t k = 0; k < filt.nodes(); ++k) {
      su += filt.controls[0][k].mean();
      sz += filt.filters[0][k].mean();
    }
    mean_u[i] = su / static_cast<double>(filt.nodes());
    mean_z[i] = sz / static_cast<double>(filt.nodes());
  }
  std::cout << "time-averaged mean control: " << mean_u[0] << " (dtilde=2) vs "
            << mean_u[1] << " (dtilde=6)\n";
  std::cout << "time-averaged mean filtered state: " << mean_z[0] << " (dtilde=2) vs "
            << mean_z[1] << " (dtilde=6)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mfglab: a laboratory for partial-information linear-quadratic "
               "mean-field games"};
  app.require_subcommand(0, 1);

  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  double dt_override = 0;
  std::size_t steps_override = 0;
  std::size_t n_paths_override = 0;
  std::size_t reps_override = 0;
  std::vector<std::size_t> ngrid_override;
  double dtilde_override = 0;

  app.add_option("--config", config_path, "path to a JSON configuration file");
  app.add_option("--out", out_override, "output directory (overrides output.dir)");
  app.add_option("--seed", seed_override, "Monte Carlo seed (overrides monte_carlo.seed)");
  app.add_option("--dt", dt_override, "time-step size; converted to grid.steps");
  app.add_option("--steps", steps_override, "number of time steps (overrides grid.steps)");
  app.add_option("--n-paths", n_paths_override,
                 "Monte Carlo path count (overrides monte_carlo.n_paths)");
  app.add_option("--reps", reps_override,
                 "replication count (overrides monte_carlo.reps)");
  app.add_option("--N-grid", ngrid_override, "population sizes, e.g. 5,10,20")
      ->delimiter(',');
  app.add_option("--dtilde", dtilde_override,
                 "idiosyncratic control-volatility coefficient for the preset model");

  const char* sub_names[] = {"validate", "riccati", "simulate", "fbsde", "nash",
                             "example-ibl"};
  const char* sub_descs[] = {
      "check a configuration against the standing assumptions",
      "solve the feedback synthesis ODE system and write riccati.csv",
      "simulate filtered-state and population dynamics under the feedback law",
      "solve the projected mean-field FBSDE by Picard/least-squares Monte Carlo",
      "estimate epsilon-Nash rates over a grid of population sizes",
      "run the canned inter-bank lending example"};
  for (int i = 0; i < 6; ++i) {
    app.add_subcommand(sub_names[i], sub_descs[i])->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    json root = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) {
        throw mfg::ArgumentError("cannot open config file '" + config_path + "'");
      }
      try {
        in >> root;
      } catch (const json::exception& e) {
        throw mfg::ArgumentError(std::string("config is not valid JSON: ") + e.what());
      }
    }
    RunConfig cfg = parse_config(root);

    if (app.count("--out")) cfg.out_dir = out_override;
    if (app.count("--seed")) cfg.seed = seed_override;
    if (app.count("--steps")) cfg.steps = steps_override;
    if (app.count("--dt")) {
      if (dt_override <= 0) throw mfg::ArgumentError("--dt must be positive");
      cfg.steps = static_cast<std::size_t>(std::llround(cfg.T / dt_override));
      if (cfg.steps < 2 || std::abs(cfg.T / static_cast<double>(cfg.steps) - dt_override) >
                               1e-9 * dt_override) {
        throw mfg::ArgumentError("--dt must divide the horizon T evenly");
      }
    }
    if (app.count("--n-paths")) cfg.n_paths = n_paths_override;
    if (app.count("--reps")) cfg.reps = reps_override;
    if (app.count("--N-grid")) cfg.N_grid = ngrid_override;
    if (app.count("--dtilde")) cfg.dtilde = dtilde_override;

    std::string chosen = cfg.experiment;
    for (const auto* sub : app.get_subcommands()) chosen = sub->get_name();
    if (chosen.empty()) {
      std::cerr << "error: no subcommand given and config has no 'experiment' entry\n";
      std::cerr << app.help();
      return 2;
    }

    if (chosen == "validate") return run_validate(cfg);
    if (chosen == "riccati") return run_riccati(cfg);
    if (chosen == "simulate") return run_simulate(cfg);
    if (chosen == "fbsde") return run_fbsde(cfg);
    if (chosen == "nash") return run_nash(cfg);
    if (chosen == "example-ibl") return run_example(cfg);
    std::cerr << "error: unknown experiment '" << chosen << "'\n";
    return 2;
  } catch (const mfg::StructuralError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mfg::ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mfg::NonConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mfg::RegressionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mfg::InvariantError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
}
