#include "mfglab/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mfg::io {

namespace {

// Column labels for a vectorized n1 x n2 quantity: plain `name` for scalars,
// `name_r_c` (row-major) otherwise.
void append_labels(std::ostringstream& os, const std::string& name,
                   Eigen::Index rows, Eigen::Index cols) {
  if (rows == 1 && cols == 1) {
    os << ',' << name;
    return;
  }
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      os << ',' << name;
      if (cols == 1)
        os << '_' << r;
      else
        os << '_' << r << '_' << c;
    }
}

void append_values(std::ostringstream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      os << ',' << format_double(m(r, c));
}

void append_values(std::ostringstream& os, const Vector& v) {
  for (Eigen::Index r = 0; r < v.size(); ++r)
    os << ',' << format_double(v(r));
}

// Cross-path (pooling all agents) mean and standard deviation of one
// component at one node.
std::pair<double, double> panel_stats(
    const std::vector<std::vector<Matrix>>& panels, std::size_t node,
    Eigen::Index component) {
  double mean = 0.0;
  std::size_t count = 0;
  for (const auto& agent : panels) {
    const Matrix& m = agent[node];
    for (Eigen::Index p = 0; p < m.cols(); ++p) {
      mean += m(component, p);
      ++count;
    }
  }
  mean /= static_cast<double>(count);
  double ss = 0.0;
  for (const auto& agent : panels) {
    const Matrix& m = agent[node];
    for (Eigen::Index p = 0; p < m.cols(); ++p) {
      const double d = m(component, p) - mean;
      ss += d * d;
    }
  }
  const double sd =
      count > 1 ? std::sqrt(ss / static_cast<double>(count - 1)) : 0.0;
  return {mean, sd};
}

nlohmann::json estimate_json(const ScalarEstimate& e) {
  return {{"value", e.value}, {"std_error", e.std_error}, {"reps", e.reps}};
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string metadata_header(std::uint64_t config_hash, std::uint64_t seed) {
  std::ostringstream os;
  os << "# config=" << std::hex << config_hash << std::dec << " seed=" << seed
     << '\n';
  return os.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec)
      throw ArgumentError("cannot create output directory " +
                          target.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw ArgumentError("cannot open " + tmp.string() + " for writing");
    out << contents;
    out.flush();
    if (!out) throw ArgumentError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec)
    throw ArgumentError("cannot move " + tmp.string() + " into place: " +
                        ec.message());
}

std::string riccati_csv(const RiccatiSolution& sol, const TimeGrid& grid) {
  const auto n = sol.P.empty() ? 0 : sol.P[0].rows();
  std::ostringstream os;
  os << 't';
  append_labels(os, "P", n, n);
  append_labels(os, "Lambda", n, n);
  append_labels(os, "Pi", n, n);
  append_labels(os, "Phi", n, 1);
  append_labels(os, "l", n, 1);
  os << '\n';
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    os << format_double(grid.t(k));
    append_values(os, sol.P[k]);
    append_values(os, sol.Lambda[k]);
    append_values(os, sol.Pi[k]);
    append_values(os, sol.Phi[k]);
    append_values(os, sol.l[k]);
    os << '\n';
  }
  return os.str();
}

std::string sample_paths_csv(const PathEnsemble& ens, std::size_t agent,
                             std::size_t max_paths, const TimeGrid& grid) {
  if (agent >= ens.n_agents)
    throw ArgumentError("sample_paths_csv: agent index out of range");
  const std::size_t shown = std::min(max_paths, ens.n_paths);
  const auto& filters = ens.filters[agent];
  const auto& controls = ens.controls[agent];
  const auto n = filters[0].rows();
  const auto m = controls[0].rows();

  std::ostringstream os;
  os << 't';
  for (std::size_t p = 0; p < shown; ++p) {
    append_labels(os, "zhat" + std::to_string(p), n, 1);
    append_labels(os, "u" + std::to_string(p), m, 1);
  }
  os << '\n';
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    os << format_double(grid.t(k));
    for (std::size_t p = 0; p < shown; ++p) {
      append_values(os,
                    Vector(filters[k].col(static_cast<Eigen::Index>(p))));
      append_values(os,
                    Vector(controls[k].col(static_cast<Eigen::Index>(p))));
    }
    os << '\n';
  }
  return os.str();
}

namespace {

std::string summary_csv(const PathEnsemble& ens, const TimeGrid& grid,
                        bool with_states) {
  const auto n = ens.filters.empty() ? ens.states[0][0].rows()
                                     : ens.filters[0][0].rows();
  const auto m = ens.controls[0][0].rows();
  std::ostringstream os;
  os << 't';
  if (with_states) {
    append_labels(os, "state_mean", n, 1);
    append_labels(os, "state_std", n, 1);
  }
  append_labels(os, "filter_mean", n, 1);
  append_labels(os, "filter_std", n, 1);
  append_labels(os, "control_mean", m, 1);
  append_labels(os, "control_std", m, 1);
  os << '\n';
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    os << format_double(grid.t(k));
    if (with_states)
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index c = 0; c < n; ++c) {
          const auto [mean, sd] = panel_stats(ens.states, k, c);
          os << ',' << format_double(pass == 0 ? mean : sd);
        }
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto [mean, sd] = panel_stats(ens.filters, k, c);
        os << ',' << format_double(pass == 0 ? mean : sd);
      }
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index c = 0; c < m; ++c) {
        const auto [mean, sd] = panel_stats(ens.controls, k, c);
        os << ',' << format_double(pass == 0 ? mean : sd);
      }
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::string filter_summary_csv(const PathEnsemble& ens, const TimeGrid& grid) {
  return summary_csv(ens, grid, false);
}

std::string population_summary_csv(const PathEnsemble& ens,
                                   const TimeGrid& grid) {
  if (ens.states.empty())
    throw StructuralError("population_summary_csv: ensemble has no states");
  return summary_csv(ens, grid, true);
}

std::string picard_diagnostics_csv(const std::vector<double>& diffY,
                                   const std::vector<double>& diffZ,
                                   const std::vector<double>& diffZt,
                                   const std::vector<double>& ratios) {
  std::ostringstream os;
  os << "iter,diffY,diffZ,diffZtilde,ratio\n";
  for (std::size_t i = 0; i < diffY.size(); ++i) {
    os << (i + 1) << ',' << format_double(diffY[i]) << ','
       << format_double(diffZ[i]) << ',' << format_double(diffZt[i]) << ',';
    if (i >= 1 && i - 1 < ratios.size()) os << format_double(ratios[i - 1]);
    os << '\n';
  }
  return os.str();
}

std::string ratio_history_csv(const std::vector<double>& ratios) {
  std::ostringstream os;
  os << "iter,ratio\n";
  for (std::size_t i = 0; i < ratios.size(); ++i)
    os << (i + 2) << ',' << format_double(ratios[i]) << '\n';
  return os.str();
}

std::string fbsde_summary_csv(const FBSDEState& st, const TimeGrid& grid) {
  const auto n = st.X.empty() ? 0 : st.X[0].rows();
  const auto m = st.U.empty() ? 0 : st.U[0].rows();
  const auto P = static_cast<double>(st.n_paths);
  auto stats = [P](const Matrix& panel, Eigen::Index c) {
    const double mean = panel.row(c).mean();
    const double ss = (panel.row(c).array() - mean).square().sum();
    const double sd = P > 1 ? std::sqrt(ss / (P - 1.0)) : 0.0;
    return std::pair<double, double>{mean, sd};
  };

  std::ostringstream os;
  os << 't';
  append_labels(os, "X_mean", n, 1);
  append_labels(os, "X_std", n, 1);
  append_labels(os, "Y_mean", n, 1);
  append_labels(os, "Y_std", n, 1);
  if (m > 0) {
    append_labels(os, "u_mean", m, 1);
    append_labels(os, "u_std", m, 1);
  }
  os << '\n';
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    os << format_double(grid.t(k));
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto [mean, sd] = stats(st.X[k], c);
        os << ',' << format_double(pass == 0 ? mean : sd);
      }
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto [mean, sd] = stats(st.Y[k], c);
        os << ',' << format_double(pass == 0 ? mean : sd);
      }
    if (m > 0)
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index c = 0; c < m; ++c) {
          const auto [mean, sd] = stats(st.U[k], c);
          os << ',' << format_double(pass == 0 ? mean : sd);
        }
    os << '\n';
  }
  return os.str();
}

std::string nash_report_csv(const NashReport& rep) {
  std::ostringstream os;
  os << "N,state_error,se_state,cost_gap,se_cost,deviation_gap,se_deviation,"
        "epsilon\n";
  for (std::size_t i = 0; i < rep.population_sizes.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < rep.deviation_gaps[i].size(); ++a)
      if (rep.deviation_gaps[i][a].value > rep.deviation_gaps[i][best].value)
        best = a;
    os << rep.population_sizes[i] << ','
       << format_double(rep.state_errors[i].value) << ','
       << format_double(rep.state_errors[i].std_error) << ','
       << format_double(rep.cost_gaps[i].value) << ','
       << format_double(rep.cost_gaps[i].std_error) << ','
       << format_double(rep.deviation_gaps[i][best].value) << ','
       << format_double(rep.deviation_gaps[i][best].std_error) << ','
       << format_double(rep.epsilons[i]) << '\n';
  }
  return os.str();
}

std::string nash_report_json(const NashReport& rep,
                             std::uint64_t config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["seed"] = rep.seed;
  j["reps"] = rep.reps;
  j["population_sizes"] = rep.population_sizes;
  j["state_errors"] = nlohmann::json::array();
  for (const auto& e : rep.state_errors)
    j["state_errors"].push_back(estimate_json(e));
  j["cost_gaps"] = nlohmann::json::array();
  for (const auto& e : rep.cost_gaps) j["cost_gaps"].push_back(estimate_json(e));
  j["deviations"] = nlohmann::json::array();
  for (std::size_t i = 0; i < rep.population_sizes.size(); ++i) {
    nlohmann::json row;
    row["N"] = rep.population_sizes[i];
    for (std::size_t a = 0; a < rep.alternative_names.size(); ++a)
      row[rep.alternative_names[a]] = estimate_json(rep.deviation_gaps[i][a]);
    row["epsilon"] = rep.epsilons[i];
    j["deviations"].push_back(row);
  }
  j["slopes"] = {
      {"state_consistency",
       {{"slope", rep.state_rate.slope},
        {"intercept", rep.state_rate.intercept},
        {"std_err", rep.state_rate.std_err}}},
      {"cost_gap",
       {{"slope", rep.cost_rate.slope},
        {"intercept", rep.cost_rate.intercept},
        {"std_err", rep.cost_rate.std_err}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace mfg::io
