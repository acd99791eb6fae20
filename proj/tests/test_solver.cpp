#include <anisoflow/solver.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace anisoflow;

namespace {

/// Tiny hand-built system: energy v^T K v - b^T v with one constraint row.
StokesSystem<2> toy_system(const Eigen::MatrixXd& K, const Eigen::VectorXd& b,
                           const Eigen::MatrixXd& C, const Eigen::VectorXd& c0) {
  StokesSystem<2> sys;
  const int n = static_cast<int>(K.rows());
  sys.K = K.sparseView();
  sys.b = b;
  sys.C = C.sparseView();
  sys.c0 = c0;
  sys.block_of_row.resize(C.rows());
  for (int r = 0; r < C.rows(); ++r) sys.block_of_row[r] = r;
  for (int i = 0; i < n; ++i) {
    sys.free_dofs.push_back(i);
    sys.free_index.push_back(i);
  }
  return sys;
}

}  // namespace

TEST_CASE("hand-sized KKT solves") {
  // min v^T v - b^T v subject to v1 + v2 = 0
  auto sys = toy_system(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d{2.0, 4.0},
                        Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Zero(1));
  KktSolver solver;
  solver.factorize(sys);
  auto state = solve_kkt(sys, solver);
  CHECK(state.v_free[0] == Catch::Approx(-0.5).margin(1e-12));
  CHECK(state.v_free[1] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(state.multipliers.size() == 1);
  CHECK(state.multipliers[0] == Catch::Approx(3.0).margin(1e-12));

  // unconstrained: v = b / 2
  auto free_sys = toy_system(Eigen::MatrixXd::Identity(2, 2),
                             Eigen::Vector2d{2.0, 4.0}, Eigen::MatrixXd::Zero(0, 2),
                             Eigen::VectorXd::Zero(0));
  KktSolver s2;
  s2.factorize(free_sys);
  auto st2 = solve_kkt(free_sys, s2);
  CHECK(st2.v_free[0] == Catch::Approx(1.0).margin(1e-13));
  CHECK(st2.v_free[1] == Catch::Approx(2.0).margin(1e-13));

  // zero load: exact zero solution
  auto zero_sys = toy_system(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d::Zero(),
                             Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Zero(1));
  KktSolver s3;
  s3.factorize(zero_sys);
  auto st3 = solve_kkt(zero_sys, s3);
  CHECK(st3.v_free.cwiseAbs().maxCoeff() == 0.0);
}

namespace {

/// Left-inlet channel boundary data: interior left nodes move at (1,0),
/// every other boundary node except the right face is a zero wall.
DirichletSet<2> channel_bc(const GridSpec<2>& grid) {
  DirichletSet<2> bc;
  const int nx = grid.cells[0], ny = grid.cells[1];
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      const bool boundary = i == 0 || j == 0 || j == ny;
      if (!boundary) continue;  // right face stays free
      if (i == nx) continue;
      Vec<2> v = Vec<2>::Zero();
      if (i == 0 && j > 0 && j < ny) v = Vec<2>{1.0, 0.0};
      bc.pin_node(grid.node_index({{i, j}}), v);
    }
  }
  return bc;
}

}  // namespace

TEST_CASE("channel solve meets its residual and conservation invariants") {
  GridSpec<2> grid = GridSpec<2>::cube(8, 4);
  MaterialHyperparams hp;
  auto theta = DesignField<2>::uniform(grid.cell_count(), 1.0, 1.0);
  KktSolver solver;
  auto fs = solve_flow(grid, theta, hp, channel_bc(grid), solver);

  const double b_scale = 1.0 + fs.sys.b.cwiseAbs().maxCoeff();
  CHECK(fs.state.primal_residual <= 1e-8 * b_scale);
  CHECK(fs.state.constraint_residual <= 1e-10);

  // per-block net flux, evaluated independently row by row
  Eigen::VectorXd flux = fs.sys.C * fs.state.v_free + fs.sys.c0;
  CHECK(flux.cwiseAbs().maxCoeff() <= 1e-8);

  // energy optimality among feasible perturbations: E(v* + d) >= E(v*)
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  Eigen::MatrixXd Cd = Eigen::MatrixXd(fs.sys.C);
  Eigen::MatrixXd gram = Cd * Cd.transpose();
  const double e_star = fs.sys.energy(fs.state.v_free);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd d0 = Eigen::VectorXd::NullaryExpr(fs.sys.num_free(),
                                                      [&] { return val(rng); });
    Eigen::VectorXd d = d0 - Cd.transpose() * gram.ldlt().solve(Cd * d0);
    d *= 1e-3;
    CHECK(fs.sys.energy(fs.state.v_free + d) >= e_star - 1e-12);
  }
}

TEST_CASE("uniform solid box with zero walls stays at rest") {
  // Fully enclosed domain: the constraint rows sum to zero and the solver
  // must shed the redundant row instead of failing.
  GridSpec<2> grid = GridSpec<2>::cube(6, 2);
  MaterialHyperparams hp;
  auto theta = DesignField<2>::uniform(grid.cell_count(), 0.0, 1.0);
  DirichletSet<2> bc;
  const int n = grid.cells[0];
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      if (i == 0 || i == n || j == 0 || j == n)
        bc.pin_node(grid.node_index({{i, j}}), Vec<2>::Zero());

  KktSolver solver;
  auto fs = solve_flow(grid, theta, hp, bc, solver);
  CHECK(fs.state.v.cwiseAbs().maxCoeff() < 1e-10);
  bool shed = false;
  for (const auto& w : solver.warnings)
    if (w.find("redundant") != std::string::npos) shed = true;
  CHECK(shed);
}

TEST_CASE("walled-in net inflow is reported as inconsistent") {
  GridSpec<2> grid = GridSpec<2>::cube(4, 2);
  MaterialHyperparams hp;
  auto theta = DesignField<2>::uniform(grid.cell_count(), 1.0, 1.0);
  DirichletSet<2> bc;
  const int n = grid.cells[0];
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      if (i == 0 || i == n || j == 0 || j == n) {
        Vec<2> v = Vec<2>::Zero();
        if (i == 0 && j > 0 && j < n) v = Vec<2>{1.0, 0.0};  // inflow, no way out
        bc.pin_node(grid.node_index({{i, j}}), v);
      }
  auto sys = assemble(grid, theta, hp, bc);
  KktSolver solver;
  CHECK_THROWS_AS(solver.factorize(sys), SolverError);
}

TEST_CASE("tolerant mode sheds rows the pinned data contradicts") {
  // Same walled-in net inflow, but factorized for an energy measurement:
  // the unbalanceable rows go, the solve proceeds, and the residual checks
  // skip exactly the shed rows.
  GridSpec<2> grid = GridSpec<2>::cube(4, 2);
  MaterialHyperparams hp;
  auto theta = DesignField<2>::uniform(grid.cell_count(), 1.0, 1.0);
  DirichletSet<2> bc;
  const int n = grid.cells[0];
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      if (i == 0 || i == n || j == 0 || j == n) {
        Vec<2> v = Vec<2>::Zero();
        if (i == 0 && j > 0 && j < n) v = Vec<2>{1.0, 0.0};
        bc.pin_node(grid.node_index({{i, j}}), v);
      }
  auto sys = assemble(grid, theta, hp, bc);
  KktSolver solver;
  solver.factorize(sys, /*tolerate_inconsistent=*/true);
  CHECK_FALSE(solver.inconsistent_rows().empty());
  CHECK_FALSE(solver.warnings.empty());
  auto state = solve_kkt(sys, solver, &bc);
  for (int r : solver.inconsistent_rows())
    CHECK(state.multipliers[r] == 0.0);
  CHECK(state.constraint_residual <= 1e-10);
}

TEST_CASE("repeated solves are bitwise identical") {
  GridSpec<2> grid = GridSpec<2>::cube(8, 4);
  MaterialHyperparams hp;
  auto theta = DesignField<2>::uniform(grid.cell_count(), 0.7, 0.9);
  auto bc = channel_bc(grid);

  KktSolver s1, s2;
  auto a = solve_flow(grid, theta, hp, bc, s1);
  auto b = solve_flow(grid, theta, hp, bc, s2);
  REQUIRE(a.state.v.size() == b.state.v.size());
  for (int i = 0; i < a.state.v.size(); ++i)
    CHECK(a.state.v[i] == b.state.v[i]);
}

TEST_CASE("a context reuses its symbolic analysis across designs") {
  GridSpec<2> grid = GridSpec<2>::cube(8, 4);
  MaterialHyperparams hp;
  auto bc = channel_bc(grid);
  std::mt19937_64 rng(83);
  std::uniform_real_distribution<double> unif(0.2, 1.0);

  KktSolver shared;
  for (int pass = 0; pass < 3; ++pass) {
    auto theta = DesignField<2>::uniform(grid.cell_count(), unif(rng), unif(rng));
    auto reused = solve_flow(grid, theta, hp, bc, shared);
    KktSolver fresh;
    auto ref = solve_flow(grid, theta, hp, bc, fresh);
    for (int i = 0; i < ref.state.v.size(); ++i)
      CHECK(reused.state.v[i] == ref.state.v[i]);
  }
}

TEST_CASE("fully pinned system solves trivially to its Dirichlet data") {
  GridSpec<2> grid = GridSpec<2>::cube(1, 1);
  MaterialHyperparams hp;
  auto theta = DesignField<2>::uniform(1, 0.5, 0.5);
  DirichletSet<2> bc;
  for (int node = 0; node < grid.node_count(); ++node)
    bc.pin_node(node, Vec<2>{0.25, -0.5});
  KktSolver solver;
  auto fs = solve_flow(grid, theta, hp, bc, solver);
  CHECK(fs.state.v_free.size() == 0);
  for (int node = 0; node < grid.node_count(); ++node) {
    CHECK(fs.state.v[grid.dof(node, 0)] == 0.25);
    CHECK(fs.state.v[grid.dof(node, 1)] == -0.5);
  }
  CHECK(fs.state.primal_residual == 0.0);
}

TEST_CASE("3D channel solve satisfies the same invariants") {
  GridSpec<3> grid = GridSpec<3>::cube(4, 2);
  MaterialHyperparams hp;
  auto theta = DesignField<3>::uniform(grid.cell_count(), 1.0, 1.0);
  DirichletSet<3> bc;
  const int n = grid.cells[0];
  for (int k = 0; k <= n; ++k)
    for (int j = 0; j <= n; ++j)
      for (int i = 0; i <= n; ++i) {
        const bool boundary = i == 0 || j == 0 || j == n || k == 0 || k == n;
        if (!boundary || i == n) continue;
        Vec<3> v = Vec<3>::Zero();
        if (i == 0 && j > 0 && j < n && k > 0 && k < n) v = Vec<3>{1.0, 0.0, 0.0};
        bc.pin_node(grid.node_index({{i, j, k}}), v);
      }
  KktSolver solver;
  auto fs = solve_flow(grid, theta, hp, bc, solver);
  CHECK(fs.state.primal_residual <= 1e-8 * (1.0 + fs.sys.b.cwiseAbs().maxCoeff()));
  CHECK(fs.state.constraint_residual <= 1e-10);
  CHECK((fs.sys.C * fs.state.v_free + fs.sys.c0).cwiseAbs().maxCoeff() <= 1e-8);
}
