#include <anisoflow/experiments.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace anisoflow;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "anisoflow_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Extracts the n doubles (ASCII, whitespace separated) that follow a
/// header line in a VTK file.
std::vector<double> ascii_section(const std::string& text,
                                  const std::string& header, int n) {
  const auto pos = text.find(header);
  REQUIRE(pos != std::string::npos);
  std::istringstream in(text.substr(pos + header.size()));
  std::string skip;
  std::getline(in, skip);  // rest of the header line
  if (header.rfind("SCALARS", 0) == 0) std::getline(in, skip);  // LOOKUP_TABLE
  std::vector<double> out(n);
  for (double& v : out) REQUIRE(in >> v);
  return out;
}

/// Extracts the n raw little-endian doubles that follow a header line in a
/// binary VTK file.
std::vector<double> binary_section(const std::string& text,
                                   const std::string& header, int n) {
  auto pos = text.find(header);
  REQUIRE(pos != std::string::npos);
  pos = text.find('\n', pos);
  REQUIRE(pos != std::string::npos);
  if (header.rfind("SCALARS", 0) == 0) {
    pos = text.find('\n', pos + 1);  // LOOKUP_TABLE line
    REQUIRE(pos != std::string::npos);
  }
  ++pos;
  REQUIRE(text.size() >= pos + n * sizeof(double));
  std::vector<double> out(n);
  std::memcpy(out.data(), text.data() + pos, n * sizeof(double));
  return out;
}

/// Small funnel solve shared by the output tests.
struct SolvedTask {
  TaskSpec<2> task;
  DesignField<2> theta;
  Eigen::VectorXd v;
};

SolvedTask solved_channel(int n) {
  SolvedTask st;
  st.task = channel_task_2d(n, 0.5, 4, 0);
  st.theta = st.task.initial_design();
  KktSolver solver;
  st.v = simulate(st.task, st.theta, solver).state.v;
  return st;
}

}  // namespace

TEST_CASE("vtk output of a quiescent design is well formed") {
  GridSpec<2> grid({{2, 2}}, 2);
  auto theta = DesignField<2>::uniform(grid.cell_count(), 1.0, 1.0);
  MaterialHyperparams hp;
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(grid.node_count() * 2);
  const auto path = temp_file("quiescent.vtk");
  write_vtk(grid, theta, hp, v, path.string());

  const std::string text = slurp(path);
  CHECK(text.rfind("# vtk DataFile Version 3.0\n", 0) == 0);
  CHECK(text.find("ASCII\n") != std::string::npos);
  CHECK(text.find("DATASET STRUCTURED_POINTS\n") != std::string::npos);
  CHECK(text.find("DIMENSIONS 3 3 1\n") != std::string::npos);
  CHECK(text.find("SPACING 0.5 0.5 0.5\n") != std::string::npos);
  CHECK(text.find("POINT_DATA 9\n") != std::string::npos);
  CHECK(text.find("CELL_DATA 4\n") != std::string::npos);

  for (double v_i : ascii_section(text, "VECTORS velocity double", 27))
    CHECK(v_i == 0.0);
  for (double s : ascii_section(text, "SCALARS speed double 1", 9))
    CHECK(s == 0.0);
  for (double r : ascii_section(text, "SCALARS rho double 1", 4))
    CHECK(r == 1.0);
  const auto lam = ascii_section(text, "SCALARS lambda double 1", 4);
  const double expected = lambda_interp(1.0, 1.0, hp)[0];
  for (double l : lam) CHECK_THAT(l, Catch::Matchers::WithinRel(expected, 1e-9));
  // alpha = 0 means the normal points along +x
  const auto nrm = ascii_section(text, "VECTORS normal double", 12);
  for (int c = 0; c < 4; ++c) {
    CHECK(nrm[3 * c + 0] == 1.0);
    CHECK(nrm[3 * c + 1] == 0.0);
    CHECK(nrm[3 * c + 2] == 0.0);
  }
}

TEST_CASE("vtk speed equals the magnitude of the written velocity") {
  const auto st = solved_channel(6);
  const auto path = temp_file("speed.vtk");
  write_vtk(st.task.grid, st.theta, st.task.material, st.v, path.string());

  const std::string text = slurp(path);
  const int nn = st.task.grid.node_count();
  const auto vel = ascii_section(text, "VECTORS velocity double", 3 * nn);
  const auto spd = ascii_section(text, "SCALARS speed double 1", nn);
  for (int i = 0; i < nn; ++i) {
    CHECK(vel[3 * i + 2] == 0.0);  // 2D fields are z-padded
    CHECK_THAT(spd[i], Catch::Matchers::WithinAbs(
                           std::hypot(vel[3 * i], vel[3 * i + 1]), 1e-8));
  }
}

TEST_CASE("binary vtk stores the same fields as ascii") {
  const auto st = solved_channel(5);
  const auto pa = temp_file("fields_ascii.vtk");
  const auto pb = temp_file("fields_binary.vtk");
  write_vtk(st.task.grid, st.theta, st.task.material, st.v, pa.string(), false);
  write_vtk(st.task.grid, st.theta, st.task.material, st.v, pb.string(), true);

  const std::string ta = slurp(pa), tb = slurp(pb);
  CHECK(tb.find("BINARY\n") != std::string::npos);
  const int nn = st.task.grid.node_count();
  const auto va = ascii_section(ta, "VECTORS velocity double", 3 * nn);
  const auto vb = binary_section(tb, "VECTORS velocity double", 3 * nn);
  for (int i = 0; i < 3 * nn; ++i)
    CHECK_THAT(va[i], Catch::Matchers::WithinAbs(vb[i], 1e-9));
  const int nc = st.task.grid.cell_count();
  const auto ra = ascii_section(ta, "SCALARS rho double 1", nc);
  const auto rb = binary_section(tb, "SCALARS rho double 1", nc);
  for (int i = 0; i < nc; ++i) CHECK(ra[i] == rb[i]);
}

TEST_CASE("history csv round trips and is byte stable") {
  std::vector<IterationRecord> records(3);
  std::mt19937_64 rng(7);
  auto u = [&] { return uniform01(rng()); };
  for (int i = 0; i < 3; ++i) {
    auto& r = records[i];
    r.iteration = i;
    r.L_f = 10.0 * u();
    r.L_c = u();
    r.L_d = u();
    r.L_a = u();
    r.total = r.L_f + r.L_c + r.L_d + r.L_a;
    r.V_iso = 100.0 * u();
    r.V_all = r.V_iso + 10.0 * u();
    r.max_change = u();
  }
  const auto p1 = temp_file("history1.csv");
  const auto p2 = temp_file("history2.csv");
  write_history_csv(records, p1.string());
  write_history_csv(records, p2.string());
  CHECK(slurp(p1) == slurp(p2));

  const auto back = read_history_csv(p1.string());
  REQUIRE(back.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].iteration == records[i].iteration);
    CHECK(back[i].L_f == records[i].L_f);
    CHECK(back[i].L_c == records[i].L_c);
    CHECK(back[i].L_d == records[i].L_d);
    CHECK(back[i].L_a == records[i].L_a);
    CHECK(back[i].total == records[i].total);
    CHECK(back[i].V_iso == records[i].V_iso);
    CHECK(back[i].V_all == records[i].V_all);
    CHECK(back[i].max_change == records[i].max_change);
  }
}

TEST_CASE("design json round trips exactly") {
  const int n = 12;
  DesignField<2> theta = DesignField<2>::uniform(n, 0.3, 0.8);
  std::mt19937_64 rng(11);
  for (int c = 0; c < n; ++c) {
    theta.rho[c] = uniform01(rng());
    theta.eps[c] = uniform01(rng());
    theta.eps_upper[c] = 0.5 + 0.5 * uniform01(rng());
    theta.alpha(c, 0) = 6.0 * uniform01(rng()) - 3.0;
  }
  const auto path = temp_file("design.json");
  save_design(theta, path.string());
  const auto back = load_design<2>(path.string());
  REQUIRE(back.size() == n);
  CHECK(back.rho == theta.rho);
  CHECK(back.eps == theta.eps);
  CHECK(back.eps_upper == theta.eps_upper);
  CHECK(back.alpha == theta.alpha);
}

TEST_CASE("the shipped task files all load") {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(ANISOFLOW_TASKS_DIR)) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    const auto j = parse_task_file(entry.path().string());
    const int dim = task_file_dim(j);
    if (dim == 2) {
      const auto task = load_task<2>(j);
      CHECK(task.patches.size() >= 2);
    } else {
      const auto task = load_task<3>(j);
      CHECK(task.patches.size() >= 2);
    }
  }
  CHECK(seen >= 3);
}

TEST_CASE("fluid connectivity follows the thresholded design") {
  auto task = channel_task_2d(5, 0.5, 0, 0);
  auto theta = DesignField<2>::uniform(task.grid.cell_count(), 0.0, 1.0);
  // No fluid at all: disconnected.
  CHECK_FALSE(fluid_path_connected(task, theta));
  // A straight row of fluid cells through the patch centers connects.
  for (int i = 0; i < 5; ++i) theta.rho[task.grid.cell_index({i, 2})] = 1.0;
  CHECK(fluid_path_connected(task, theta));
  // Breaking one interior cell disconnects it again.
  theta.rho[task.grid.cell_index({2, 2})] = 0.4;
  CHECK_FALSE(fluid_path_connected(task, theta));
  // A detour around the break reconnects inlet and outlet.
  for (int i = 1; i <= 3; ++i) {
    theta.rho[task.grid.cell_index({i, 3})] = 1.0;
  }
  CHECK(fluid_path_connected(task, theta));
}

TEST_CASE("experiments reject unknown names and overrides") {
  CHECK_THROWS_AS(run_experiment("bogus"), std::invalid_argument);
  CHECK_THROWS_AS(run_block_divergence({{"bogus", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(run_experiment("block-size", {{"cells", 10}}),
                  std::invalid_argument);
  CHECK(experiment_names().size() == 5);
}

TEST_CASE("the block divergence experiment verdict is reproducible") {
  const auto dir = temp_file("bd_out");
  fs::remove_all(dir);
  const auto result = run_block_divergence({}, dir.string());
  CHECK(result.passed());
  REQUIRE(result.checks.size() == 2);
  CHECK(result.checks[0].value > 0.5);
  CHECK(result.checks[0].value < 0.9);
  CHECK_THAT(result.checks[1].value, Catch::Matchers::WithinAbs(1.0, 1e-6));
  CHECK(fs::exists(dir / "verdict.json"));
  CHECK(fs::exists(dir / "fields_blocks.vtk"));
  CHECK(fs::exists(dir / "fields_no_blocks.vtk"));
  std::ifstream in(dir / "verdict.json");
  nlohmann::json verdict;
  in >> verdict;
  CHECK(verdict["experiment"] == "block-divergence");
  CHECK(verdict["passed"] == true);
  // The same configuration reproduces the same ratios bit for bit.
  const auto again = run_block_divergence();
  CHECK(again.checks[0].value == result.checks[0].value);
  CHECK(again.checks[1].value == result.checks[1].value);
}
