#pragma once

#include <anisoflow/gradients.hpp>
#include <anisoflow/mma.hpp>
#include <anisoflow/pipeline.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace anisoflow {

/** One row of the optimization log. */
struct IterationRecord {
  int iteration = 0;
  double L_f = 0.0;
  double L_c = 0.0;
  double L_d = 0.0;
  double L_a = 0.0;
  double total = 0.0;
  double V_iso = 0.0;      // sum of eps*rho over cells
  double V_all = 0.0;      // sum of rho over cells
  double max_change = 0.0; // max |x_k - x_{k-1}| over all design variables
};

/**
 * Complete account of one optimization run: the per-iteration records
 * (iteration 0 is the initial design; one more per design update, so a
 * finished run holds iterations + 1 rows), the normalized regularizer
 * weights all totals were measured under, and the minimum-L_f design.
 * If a forward solve fails mid-run the history up to that point survives
 * with `aborted` set.
 */
template <int Dim>
struct OptimizationHistory {
  std::vector<IterationRecord> records;
  EffectiveWeights weights;
  DesignField<Dim> best;
  int best_iteration = 0;
  DesignField<Dim> final_design;
  bool aborted = false;
  std::string abort_reason;
};

template <int Dim>
using IterationCallback =
    std::function<void(const IterationRecord&, const DesignField<Dim>&)>;

/**
 * Build the starting design: the task's initial field (defaults rho = V_max,
 * eps = 1, alpha = 0), optionally perturbed by independent uniform(-k, k)
 * noise on rho and alpha. eps is never perturbed. In isotropic mode eps is
 * forced to 1 (the design space is fluidity only; orientation is inert
 * there). rho is clamped back into [0, 1] after perturbation.
 */
template <int Dim>
DesignField<Dim> starting_design(const TaskSpec<Dim>& task) {
  DesignField<Dim> theta = task.initial_design();
  if (task.optimizer.isotropic) theta.eps.setOnes();
  const double k = task.optimizer.perturb;
  if (k > 0.0) {
    std::mt19937_64 rng(task.optimizer.seed);
    auto noise = [&] { return k * (2.0 * uniform01(rng()) - 1.0); };
    for (int c = 0; c < theta.size(); ++c)
      theta.rho[c] = std::clamp(theta.rho[c] + noise(), 0.0, 1.0);
    for (int c = 0; c < theta.size(); ++c)
      for (int j = 0; j < Dim - 1; ++j) theta.alpha(c, j) += noise();
  }
  return theta;
}

/**
 * Gradient-driven design loop. Each iteration: evaluate the design (which
 * freezes the neighborhood statistics and runs both forward solves), take
 * the adjoint gradient, update the dynamic upper bound on eps from the
 * frozen density spread (clipping eps down where the bound tightened), and
 * advance the stacked variable vector [rho; eps; alpha] (rho alone in
 * isotropic mode) one MMA step under the two volume constraints, which are
 * scaled by 1/n_cells so their tolerance is resolution-independent.
 *
 * Angles are unbounded in principle; each iteration re-wraps them into
 * [-pi, pi] (shifting the MMA history by the same offsets) and lets the step
 * move within a 2*pi-wide box centered on the wrapped value, so a rotation
 * can pass the +-pi seam freely.
 *
 * Regularizer weights are normalized against the first evaluation and then
 * held fixed. The returned history records iteration 0 and every post-step
 * evaluation; `best` is the minimum-L_f design over all records.
 */
template <int Dim>
OptimizationHistory<Dim> optimize(const TaskSpec<Dim>& task,
                                  const IterationCallback<Dim>& on_iteration = {}) {
  constexpr double kPi = 3.14159265358979323846;
  const int n = task.grid.cell_count();
  const bool iso = task.optimizer.isotropic;
  const int num_vars = iso ? n : n * (2 + (Dim - 1));
  const int off_eps = n;
  auto off_alpha = [&](int col) { return n * (2 + col); };

  OptimizationHistory<Dim> run;
  run.best_iteration = 0;
  DesignField<Dim> theta = starting_design<Dim>(task);

  SolveContexts ctx;
  Mma mma(num_vars, 2);

  auto stack = [&](const DesignField<Dim>& th) {
    Eigen::VectorXd x(num_vars);
    x.head(n) = th.rho;
    if (!iso) {
      x.segment(off_eps, n) = th.eps;
      for (int j = 0; j < Dim - 1; ++j) x.segment(off_alpha(j), n) = th.alpha.col(j);
    }
    return x;
  };

  double best_lf = std::numeric_limits<double>::infinity();
  Evaluation<Dim> ev;
  auto record = [&](int iteration, double max_change) {
    IterationRecord rec;
    rec.iteration = iteration;
    rec.L_f = ev.lf.value;
    rec.L_c = ev.L_c;
    rec.L_d = ev.ld.value;
    rec.L_a = ev.la.value;
    rec.total = ev.total(run.weights);
    rec.V_iso = ev.vol.V_iso;
    rec.V_all = ev.vol.V_all;
    rec.max_change = max_change;
    run.records.push_back(rec);
    if (ev.lf.value < best_lf) {
      best_lf = ev.lf.value;
      run.best = theta;
      run.best_iteration = iteration;
    }
    if (on_iteration) on_iteration(rec, theta);
  };

  try {
    ev = evaluate(task, theta, ctx);
  } catch (const SolverError& e) {
    run.aborted = true;
    run.abort_reason = e.what();
    run.final_design = theta;
    run.best = theta;
    return run;
  }
  run.weights = make_effective_weights(task.weights, ev);
  record(0, 0.0);

  for (int it = 1; it <= task.optimizer.iterations; ++it) {
    const GradientBundle<Dim> grad = total_gradient(task, theta, ev, run.weights, ctx);

    // Dynamic isotropy bound from the statistics this iteration was
    // evaluated under; tightenings clip the current eps immediately.
    if (!iso) {
      theta.eps_upper = dynamic_eps_bound(ev.frozen);
      theta.eps = theta.eps.cwiseMin(theta.eps_upper);
    }

    // Re-wrap angles into [-pi, pi]; the MMA history follows the shift.
    if (!iso) {
      Eigen::VectorXd shift = Eigen::VectorXd::Zero(num_vars);
      bool wrapped = false;
      for (int j = 0; j < Dim - 1; ++j) {
        for (int c = 0; c < n; ++c) {
          const double a = theta.alpha(c, j);
          const double turns = std::round(a / (2.0 * kPi));
          if (turns != 0.0) {
            const double w = a - 2.0 * kPi * turns;
            shift[off_alpha(j) + c] = w - a;
            theta.alpha(c, j) = w;
            wrapped = true;
          }
        }
      }
      if (wrapped) mma.shift_history(shift);
    }

    const Eigen::VectorXd x = stack(theta);
    Eigen::VectorXd lb(num_vars), ub(num_vars), df(num_vars);
    lb.head(n).setZero();
    ub.head(n).setOnes();
    df.head(n) = grad.d_rho;
    if (!iso) {
      lb.segment(off_eps, n).setZero();
      ub.segment(off_eps, n) = theta.eps_upper;
      df.segment(off_eps, n) = grad.d_eps;
      for (int j = 0; j < Dim - 1; ++j) {
        lb.segment(off_alpha(j), n) = theta.alpha.col(j).array() - kPi;
        ub.segment(off_alpha(j), n) = theta.alpha.col(j).array() + kPi;
        df.segment(off_alpha(j), n) = grad.d_alpha.col(j);
      }
    }

    // Volume constraints, scaled to per-cell units. Measured at the design
    // the step starts from (after any eps clip), not the stale evaluation.
    const VolumeConstraints<Dim> vol = volume_constraints(theta, task.weights);
    Eigen::VectorXd g(2);
    g << vol.g_iso / n, vol.g_all / n;
    Eigen::MatrixXd dg = Eigen::MatrixXd::Zero(2, num_vars);
    dg.row(0).head(n) = vol.d_iso_drho.transpose() / n;
    dg.row(1).head(n).setConstant(1.0 / n);
    if (!iso) dg.row(0).segment(off_eps, n) = vol.d_iso_deps.transpose() / n;

    const Eigen::VectorXd x_next = mma.step(x, ev.total(run.weights), df, g, dg, lb, ub);
    const double max_change = (x_next - x).lpNorm<Eigen::Infinity>();

    theta.rho = x_next.head(n);
    if (!iso) {
      theta.eps = x_next.segment(off_eps, n);
      for (int j = 0; j < Dim - 1; ++j) theta.alpha.col(j) = x_next.segment(off_alpha(j), n);
    }

    try {
      ev = evaluate(task, theta, ctx);
    } catch (const SolverError& e) {
      run.aborted = true;
      run.abort_reason = e.what();
      break;
    }
    record(it, max_change);
  }

  run.final_design = theta;
  return run;
}

}  // namespace anisoflow
