#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mfglab/io.hpp>
#include <mfglab/model.hpp>
#include <mfglab/riccati.hpp>
#include <sstream>
#include <string>

using namespace mfg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("doubles are formatted to full round-trip precision") {
  const double values[] = {3.141592653589793, -1.0 / 3.0, 1e-17, 0.0,
                           123456789.123456789};
  for (double v : values) {
    std::string s = io::format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
}

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(io::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(io::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(io::fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("metadata header carries the hash and seed") {
  std::string h = io::metadata_header(0x1234, 42);
  CHECK(h == "# config=1234 seed=42\n");
  CHECK(h.front() == '#');
  CHECK(h.back() == '\n');
}

TEST_CASE("atomic writes create directories and leave no temp files") {
  fs::path dir = fs::temp_directory_path() / "mfglab_io_test";
  fs::remove_all(dir);
  fs::path target = dir / "nested" / "file.csv";
  io::write_file_atomic(target.string(), "hello\nworld\n");
  CHECK(slurp(target) == "hello\nworld\n");
  CHECK_FALSE(fs::exists(target.string() + ".tmp"));
  // Overwrite is atomic too.
  io::write_file_atomic(target.string(), "second\n");
  CHECK(slurp(target) == "second\n");
  fs::remove_all(dir);
}

TEST_CASE("riccati table layout") {
  TimeGrid grid{1.0, 50};
  CoefficientSet c = CoefficientSet::ibl_preset(grid);
  RiccatiSolution sol = solve_riccati(c, grid);
  std::string csv = io::riccati_csv(sol, grid);
  std::istringstream is(csv);
  std::string header;
  std::getline(is, header);
  CHECK(header == "t,P,Lambda,Pi,Phi,l");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == grid.nodes());

  // First data row starts at t = 0 and ends with l(0) = x0 = 1.
  std::istringstream is2(csv);
  std::getline(is2, line);
  std::getline(is2, line);
  CHECK(line.substr(0, 2) == "0,");
  CHECK(line.substr(line.rfind(',') + 1) == "1");
}

TEST_CASE("picard diagnostics layout") {
  std::string csv = io::picard_diagnostics_csv({10.0, 5.0, 2.5}, {1.0, 0.5, 0.25},
                                               {0.2, 0.1, 0.05}, {0.5, 0.5});
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "iter,diffY,diffZ,diffZtilde,ratio");
  std::getline(is, line);
  // No ratio on the first iteration: the row ends with an empty field.
  CHECK(line.back() == ',');
  std::getline(is, line);
  CHECK(line.find(",0.5") != std::string::npos);
}

TEST_CASE("ratio history fallback starts at iteration 2") {
  std::string csv = io::ratio_history_csv({1.4, 1.9});
  CHECK(csv == "iter,ratio\n2,1.3999999999999999\n3,1.8999999999999999\n");
}

TEST_CASE("nash report serializes to parseable JSON with both slopes") {
  NashReport rep;
  rep.population_sizes = {5, 10};
  rep.state_errors = {{0.4, 0.01, 8}, {0.2, 0.005, 8}};
  rep.cost_gaps = {{0.3, 0.02, 8}, {0.21, 0.01, 8}};
  rep.alternative_names = {"zero", "scaled_1.5"};
  rep.deviation_gaps = {{{-0.1, 0.01, 8}, {-0.2, 0.01, 8}},
                        {{-0.05, 0.01, 8}, {-0.1, 0.01, 8}}};
  rep.epsilons = {0.02, 0.02};
  rep.state_rate = {-1.0, 0.1, 0.05};
  rep.cost_rate = {-0.5, 0.2, 0.04};
  rep.seed = 9;
  rep.reps = 8;
  std::string body = io::nash_report_json(rep, 0xabcd);
  CHECK(body.find("\"state_consistency\"") != std::string::npos);
  CHECK(body.find("\"cost_gap\"") != std::string::npos);
  CHECK(body.find("\"config_hash\"") != std::string::npos);
  CHECK(body.find("\"scaled_1.5\"") != std::string::npos);
  CHECK(body.back() == '\n');

  std::string csv = io::nash_report_csv(rep);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line ==
        "N,state_error,se_state,cost_gap,se_cost,deviation_gap,se_deviation,"
        "epsilon");
  std::getline(is, line);
  CHECK(line.substr(0, 2) == "5,");
}
