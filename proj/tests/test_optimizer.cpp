#include <anisoflow/optimizer.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace anisoflow;

namespace {

/// Straight channel task built in code: inlet left, outlet right.
TaskSpec<2> channel_task(int n, int block = 4) {
  TaskSpec<2> task;
  task.grid = GridSpec<2>({{n, n}}, block);
  BoundaryPatch<2> in;
  in.id = "in";
  in.axis = 0;
  in.side = 0;
  in.role = PatchRole::inlet;
  in.center[0] = 0.5;
  in.extent[0] = 1.0;
  in.velocity = Vec<2>{1.0, 0.0};
  BoundaryPatch<2> out = in;
  out.id = "out";
  out.side = 1;
  out.role = PatchRole::outlet;
  task.patches = {in, out};
  return task;
}

}  // namespace

TEST_CASE("zero iterations returns the evaluated initial design") {
  TaskSpec<2> task = channel_task(4);
  task.optimizer.iterations = 0;
  const auto run = optimize(task);

  REQUIRE(run.records.size() == 1);
  CHECK(run.records[0].iteration == 0);
  CHECK_FALSE(run.aborted);
  CHECK(run.best_iteration == 0);

  // The record matches a direct evaluation of the starting design.
  const DesignField<2> theta = starting_design(task);
  CHECK((run.best.rho - theta.rho).lpNorm<Eigen::Infinity>() == 0.0);
  SolveContexts ctx;
  const auto ev = evaluate(task, theta, ctx);
  CHECK(run.records[0].L_f == Catch::Approx(ev.lf.value).epsilon(1e-12));
  CHECK(run.records[0].L_c == Catch::Approx(ev.L_c).epsilon(1e-12));
  CHECK(run.records[0].V_iso == Catch::Approx(ev.vol.V_iso).epsilon(1e-12));
  CHECK(run.records[0].total ==
        Catch::Approx(ev.total(run.weights)).epsilon(1e-12));
}

TEST_CASE("adding pi to an angle leaves every objective term unchanged") {
  TaskSpec<2> task = channel_task(5);
  DesignField<2> theta = DesignField<2>::uniform(task.grid.cell_count(), 0.5, 0.4);
  for (int c = 0; c < theta.size(); ++c) {
    theta.rho[c] = 0.2 + 0.6 * ((c * 7) % 10) / 10.0;
    theta.alpha(c, 0) = -1.0 + 0.17 * (c % 11);
  }

  SolveContexts ctx_a, ctx_b;
  const auto ev_a = evaluate(task, theta, ctx_a);
  DesignField<2> flipped = theta;
  flipped.alpha.array() += 3.14159265358979323846;
  const auto ev_b = evaluate(task, flipped, ctx_b);

  CHECK(ev_b.lf.value == Catch::Approx(ev_a.lf.value).epsilon(1e-12));
  CHECK(ev_b.L_c == Catch::Approx(ev_a.L_c).epsilon(1e-12));
  CHECK(ev_b.ld.value == Catch::Approx(ev_a.ld.value).margin(1e-12));
  CHECK(ev_b.la.value == Catch::Approx(ev_a.la.value).epsilon(1e-12));
}

TEST_CASE("short run: history is replayable and constraints hold") {
  TaskSpec<2> task = channel_task(8);
  task.optimizer.iterations = 6;
  task.weights.V_max = 0.5;

  int callbacks = 0;
  const auto run = optimize<2>(task, [&](const IterationRecord& rec, const DesignField<2>&) {
    CHECK(rec.iteration == callbacks);
    ++callbacks;
  });

  REQUIRE_FALSE(run.aborted);
  REQUIRE(run.records.size() == 7);
  CHECK(callbacks == 7);

  const int n = task.grid.cell_count();
  double best_lf = run.records[0].L_f;
  for (const auto& rec : run.records) best_lf = std::min(best_lf, rec.L_f);
  CHECK(run.records[run.best_iteration].L_f == best_lf);

  // Bounds and volume constraints hold at the best design.
  CHECK(run.best.rho.minCoeff() >= 0.0);
  CHECK(run.best.rho.maxCoeff() <= 1.0);
  CHECK((run.best.eps.array() <= run.best.eps_upper.array() + 1e-12).all());
  CHECK(run.best.eps.minCoeff() >= 0.0);
  const auto vol = volume_constraints(run.best, task.weights);
  CHECK(vol.g_iso <= 1e-6 * n);
  CHECK(vol.g_all <= 1e-6 * n);

  // Replaying the best snapshot reproduces its record.
  SolveContexts ctx;
  const auto ev = evaluate(task, run.best, ctx);
  const auto& rec = run.records[run.best_iteration];
  CHECK(ev.lf.value == Catch::Approx(rec.L_f).epsilon(1e-12).margin(1e-14));
  CHECK(ev.L_c == Catch::Approx(rec.L_c).epsilon(1e-12).margin(1e-14));
  CHECK(ev.ld.value == Catch::Approx(rec.L_d).epsilon(1e-12).margin(1e-14));
  CHECK(ev.la.value == Catch::Approx(rec.L_a).epsilon(1e-12).margin(1e-14));
  CHECK(ev.total(run.weights) == Catch::Approx(rec.total).epsilon(1e-12).margin(1e-14));

  // Step sizes respect the move limit: 0.2 for rho/eps, 0.2*2*pi for angles.
  for (const auto& r : run.records)
    CHECK(r.max_change <= 0.2 * 2.0 * 3.14159265358979323846 + 1e-12);
}

TEST_CASE("twenty iterations improve the outlet mismatch of a funnel") {
  // Narrow inlet and outlet: a uniform design lets the flow spread into the
  // cavity, so the outlet profile is far from its target and carving a pipe
  // helps a lot.  (With full-face patches the flow is plug-like at any
  // uniform density and there is nothing for a short run to improve.)
  TaskSpec<2> task = channel_task(10);
  task.patches[0].extent[0] = 0.4;
  task.patches[1].extent[0] = 0.4;
  task.optimizer.iterations = 20;
  task.weights.V_max = 0.5;
  const auto run = optimize(task);

  REQUIRE_FALSE(run.aborted);
  REQUIRE(run.records.size() == 21);
  const double initial = run.records[0].L_f;
  double best = initial;
  for (const auto& rec : run.records) best = std::min(best, rec.L_f);
  CHECK(best < 0.6 * initial);
  CHECK(run.records[run.best_iteration].L_f == best);
}

TEST_CASE("isotropic mode keeps eps at one and never moves alpha") {
  TaskSpec<2> task = channel_task(6);
  task.optimizer.iterations = 5;
  task.optimizer.isotropic = true;
  task.init_eps = 0.3;  // isotropic mode overrides this
  task.init_alpha = 0.4;

  const auto run = optimize(task);
  REQUIRE_FALSE(run.aborted);
  CHECK(run.final_design.eps.minCoeff() == 1.0);
  CHECK(run.final_design.eps.maxCoeff() == 1.0);
  CHECK((run.final_design.alpha.array() == 0.4).all());
  CHECK(run.records.back().V_iso == Catch::Approx(run.records.back().V_all));
}

TEST_CASE("perturbed starts are deterministic per seed and clamped") {
  TaskSpec<2> task = channel_task(6);
  task.optimizer.perturb = 0.09;
  task.optimizer.seed = 42;

  const auto a = starting_design(task);
  const auto b = starting_design(task);
  CHECK((a.rho - b.rho).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.alpha - b.alpha).lpNorm<Eigen::Infinity>() == 0.0);

  task.optimizer.seed = 43;
  const auto c = starting_design(task);
  CHECK((a.rho - c.rho).lpNorm<Eigen::Infinity>() > 0.0);

  CHECK(a.rho.minCoeff() >= 0.0);
  CHECK(a.rho.maxCoeff() <= 1.0);
  CHECK((a.rho.array() != task.weights.V_max).any());
  CHECK(a.eps.minCoeff() == 1.0);  // eps is never perturbed
  CHECK(a.alpha.cwiseAbs().maxCoeff() <= 0.09);
  CHECK((a.alpha.array() != 0.0).any());
}

TEST_CASE("angles far outside the principal interval get wrapped in") {
  TaskSpec<2> task = channel_task(4);
  task.optimizer.iterations = 1;
  task.init_alpha = 7.0;  // wraps to 7 - 2*pi ~ 0.717

  const auto run = optimize(task);
  REQUIRE_FALSE(run.aborted);
  const double limit = 3.14159265358979323846 + 0.2 * 2.0 * 3.14159265358979323846;
  CHECK(run.final_design.alpha.cwiseAbs().maxCoeff() <= limit);
  CHECK(run.records[1].max_change <= 0.2 * 2.0 * 3.14159265358979323846 + 1e-12);
}
