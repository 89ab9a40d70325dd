#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mfglab/fbsde.hpp"
#include "mfglab/filtersim.hpp"
#include "mfglab/nashlab.hpp"
#include "mfglab/riccati.hpp"
#include "mfglab/types.hpp"

namespace mfg::io {

// Floating-point formatting used by every tabular emitter: 17 significant
// digits, enough to round-trip IEEE doubles.
std::string format_double(double v);

std::uint64_t fnv1a64(std::string_view data);

// Comment line embedded at the top of every artifact file.
std::string metadata_header(std::uint64_t config_hash, std::uint64_t seed);

// Write-to-temp-then-rename so readers never observe partial files.
void write_file_atomic(const std::string& path, const std::string& contents);

// t,P,Lambda,Pi,Phi,l with row-major vectorization of matrix quantities
// (suffix _r_c added to the column names when n > 1).
std::string riccati_csv(const RiccatiSolution& sol, const TimeGrid& grid);

// Sample trajectories of one agent: t, then zhat and u for the first
// min(max_paths, n_paths) paths.
std::string sample_paths_csv(const PathEnsemble& ens, std::size_t agent,
                             std::size_t max_paths, const TimeGrid& grid);

// Cross-path (and cross-agent) mean and standard deviation per node of the
// filter and control panels.
std::string filter_summary_csv(const PathEnsemble& ens, const TimeGrid& grid);

// As filter_summary_csv plus the true-state statistics.
std::string population_summary_csv(const PathEnsemble& ens,
                                   const TimeGrid& grid);

// One row per Picard iteration: iter,diffY,diffZ,diffZtilde,ratio (ratio
// empty on the first row).
std::string picard_diagnostics_csv(const std::vector<double>& diffY,
                                   const std::vector<double>& diffZ,
                                   const std::vector<double>& diffZt,
                                   const std::vector<double>& ratios);

// Row-per-iteration fallback when only the ratio history survived a
// non-convergence error.
std::string ratio_history_csv(const std::vector<double>& ratios);

// t, cross-path mean/std of X, Y and (when recorded) U.
std::string fbsde_summary_csv(const FBSDEState& st, const TimeGrid& grid);

std::string nash_report_csv(const NashReport& rep);

// JSON body (serialized with sorted keys) carrying the full report plus the
// config hash and seed.
std::string nash_report_json(const NashReport& rep, std::uint64_t config_hash);

}  // namespace mfg::io
