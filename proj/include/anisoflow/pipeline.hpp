#pragma once

#include <anisoflow/objective.hpp>
#include <anisoflow/solver.hpp>
#include <anisoflow/task.hpp>

namespace anisoflow {

/** Persistent factorization contexts: the main (outlets free) and the
 *  compliance (outlets pinned) systems have different patterns, but each
 *  keeps its own pattern across a design loop. */
struct SolveContexts {
  KktSolver main;
  KktSolver augmented;
};

/** Regularizer weights after first-iteration normalization. */
struct EffectiveWeights {
  double c = 0.0;
  double d = 0.0;
  double a = 0.0;
};

/** Everything one design evaluation produces: both forward solves, the
 *  frozen stats they were measured under, and all loss terms. */
template <int Dim>
struct Evaluation {
  ForwardSolve<Dim> main;
  ForwardSolve<Dim> augmented;
  DirichletSet<Dim> bc_main;
  DirichletSet<Dim> bc_augmented;
  FrozenStats<Dim> frozen;
  LossWithVelocityGrad lf;
  double L_c = 0.0;
  DirectionalReg<Dim> ld;
  AnisotropicReg<Dim> la;
  VolumeConstraints<Dim> vol;

  double total(const EffectiveWeights& w) const {
    return lf.value + w.c * L_c + w.d * ld.value + w.a * la.value;
  }
};

/** Forward solve of the task's main system only. */
template <int Dim>
ForwardSolve<Dim> simulate(const TaskSpec<Dim>& task, const DesignField<Dim>& theta,
                           KktSolver& solver) {
  return solve_flow(task.grid, theta, task.material, task.dirichlet_main(), solver);
}

/**
 * Full objective evaluation at one design. Frozen neighborhood stats are
 * recomputed from `theta` unless a snapshot is supplied (gradient checks
 * must probe under the snapshot of the base design).
 */
template <int Dim>
Evaluation<Dim> evaluate(const TaskSpec<Dim>& task, const DesignField<Dim>& theta,
                         SolveContexts& ctx,
                         const FrozenStats<Dim>* frozen_override = nullptr,
                         const SolveTolerances& tol = {}) {
  Evaluation<Dim> ev;
  ev.frozen = frozen_override
                  ? *frozen_override
                  : FrozenStats<Dim>::compute(task.grid, theta, task.weights.eps0,
                                              task.weights.rho0);

  const auto tensors = build_tensors(theta, task.material);
  ev.bc_main = task.dirichlet_main();
  ev.bc_augmented = ev.bc_main.merged(task.dirichlet_outlets(ev.bc_main));

  ev.main.sys = assemble(task.grid, tensors, task.material.mu, ev.bc_main);
  ctx.main.factorize(ev.main.sys);
  ev.main.state = solve_kkt(ev.main.sys, ctx.main, &ev.bc_main, tol);

  // The pinned boundary data of the compliance solve need not be exactly
  // mass-consistent, so constraint rows it fully determines are vacuous.
  ev.augmented.sys = assemble(task.grid, tensors, task.material.mu, ev.bc_augmented);
  ctx.augmented.factorize(ev.augmented.sys, /*tolerate_inconsistent=*/true);
  ev.augmented.state = solve_kkt(ev.augmented.sys, ctx.augmented, &ev.bc_augmented, tol);

  ev.lf = functional_loss(task.grid, ev.main.state.v, task.outlet_targets(),
                          task.weights.face_weighted_Lf);
  ev.L_c = compliance_loss(ev.augmented);
  ev.ld = directional_reg(theta, ev.frozen);
  ev.la = anisotropic_reg(theta, ev.frozen);
  ev.vol = volume_constraints(theta, task.weights);
  return ev;
}

/** Normalize the regularizer weights against a first evaluation so each
 *  term enters at the configured fraction of the outlet mismatch. A term
 *  that starts at zero (the uniform start has no density spread and no
 *  anisotropic cells) is normalized by its per-cell ceiling instead -- 2
 *  per cell for the directional term, 1 per cell for the anisotropic
 *  term -- so it can never outgrow its configured share later. */
template <int Dim>
EffectiveWeights make_effective_weights(const ObjectiveWeights& w,
                                        const Evaluation<Dim>& first) {
  EffectiveWeights eff{w.w_c, w.w_d, w.w_a};
  if (!w.normalize) return eff;
  const double n = static_cast<double>(first.la.d_eps.size());
  const double base = first.lf.value > 1e-12 ? first.lf.value : 1.0;
  eff.c *= base / (first.L_c > 1e-12 ? first.L_c : 1.0);
  eff.d *= base / (first.ld.value > 1e-12 ? first.ld.value : 2.0 * n);
  eff.a *= base / (first.la.value > 1e-12 ? first.la.value : n);
  return eff;
}

}  // namespace anisoflow
