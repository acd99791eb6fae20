#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <anisoflow/pipeline.hpp>

namespace anisoflow {

/** Total objective derivative with respect to every design variable. */
template <int Dim>
struct GradientBundle {
  Eigen::VectorXd d_rho;
  Eigen::VectorXd d_eps;
  Eigen::Matrix<double, Eigen::Dynamic, Dim - 1> d_alpha;

  static GradientBundle zero(int n_cells) {
    GradientBundle g;
    g.d_rho = Eigen::VectorXd::Zero(n_cells);
    g.d_eps = Eigen::VectorXd::Zero(n_cells);
    g.d_alpha.setZero(n_cells, Dim - 1);
    return g;
  }
};

/**
 * Adjoint solve against an already-factorized system: returns the full-DOF
 * adjoint field (zero at pinned DOFs) for right-hand side dL/dv restricted
 * to the free set. The constraint block of the right-hand side is zero, so
 * the multipliers enforce C w = 0 just like the forward pass.
 */
template <int Dim>
Eigen::VectorXd adjoint_solve(const StokesSystem<Dim>& sys, const KktSolver& solver,
                              const Eigen::VectorXd& rhs_free,
                              const SolveTolerances& tol = {}) {
  const int nf = sys.num_free();
  const int nr = static_cast<int>(solver.kept_rows().size());
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf + nr);
  rhs.head(nf) = rhs_free;
  Eigen::VectorXd x = solver.solve_refined(rhs, tol);
  Eigen::VectorXd w_free = nf > 0 ? x.head(nf) : Eigen::VectorXd();
  return sys.scatter(w_free, nullptr);
}

/**
 * Chain rule through the energy form. For any loss term whose velocity
 * dependence enters as w^T K(theta) v (with w and v full-DOF fields), the
 * derivative w.r.t. each cell's variables contracts the per-cell tensor
 * partials against three cheap local quantities:
 *
 *   viscous   <dKm, S_vis>,  S_vis = mu W sum_q wq sum_comp grad(w_c) grad(v_c)^T
 *   pressure  dlambda * s_div,   s_div = (f.w)(f.v) / W
 *   friction  <dKf, S_fric>, S_fric = (W / corners) sum_a w_a v_a^T
 *
 * Adjoint terms use (w = adjoint, v = state, scale = -2); explicit energy
 * terms use (w = v = state, scale = +weight). Contributions accumulate
 * into `out` so one bundle collects every term of the objective.
 */
template <int Dim>
void accumulate_quadratic_partials(const GridSpec<Dim>& grid, const DesignField<Dim>& theta,
                                   const MaterialHyperparams& hp,
                                   const Eigen::VectorXd& w_full,
                                   const Eigen::VectorXd& v_full, double scale,
                                   GradientBundle<Dim>& out) {
  constexpr int nd = kElemDofs<Dim>;
  constexpr int nc = kCorners<Dim>;
  const double h = grid.spacing();
  const double W = grid.cell_volume();
  const auto& rule = QuadratureRule<Dim>::gauss();
  std::array<ShapeEval<Dim>, QuadratureRule<Dim>::kPoints> shapes;
  for (int q = 0; q < QuadratureRule<Dim>::kPoints; ++q)
    shapes[q] = shape_eval<Dim>(rule.point[q], h);
  const auto f = cell_flux_coefficients(grid);

  Eigen::Matrix<double, nd, 1> we, ve;
  for (int cell = 0; cell < grid.cell_count(); ++cell) {
    const auto nodes = grid.cell_nodes(cell);
    for (int a = 0; a < nc; ++a)
      for (int c = 0; c < Dim; ++c) {
        const int dof = grid.dof(nodes[a], c);
        we[local_dof(a, c, Dim)] = w_full[dof];
        ve[local_dof(a, c, Dim)] = v_full[dof];
      }

    Mat<Dim> S_vis = Mat<Dim>::Zero();
    for (int q = 0; q < QuadratureRule<Dim>::kPoints; ++q) {
      const auto& s = shapes[q];
      for (int c = 0; c < Dim; ++c) {
        Vec<Dim> gw = Vec<Dim>::Zero(), gv = Vec<Dim>::Zero();
        for (int a = 0; a < nc; ++a) {
          gw += we[local_dof(a, c, Dim)] * s.grad[a];
          gv += ve[local_dof(a, c, Dim)] * s.grad[a];
        }
        S_vis += (hp.mu * W * rule.weight[q]) * (gw * gv.transpose());
      }
    }

    const double s_div = f.dot(we) * f.dot(ve) / W;

    Mat<Dim> S_fric = Mat<Dim>::Zero();
    for (int a = 0; a < nc; ++a) {
      Vec<Dim> wa, va;
      for (int c = 0; c < Dim; ++c) {
        wa[c] = we[local_dof(a, c, Dim)];
        va[c] = ve[local_dof(a, c, Dim)];
      }
      S_fric += (W / nc) * (wa * va.transpose());
    }

    const auto d = tensor_partials<Dim>(theta.rho[cell], theta.eps[cell],
                                        theta.alpha.row(cell), hp);
    out.d_rho[cell] += scale * (d.dKm_drho.cwiseProduct(S_vis).sum() +
                                d.dlambda_drho * s_div +
                                d.dKf_drho.cwiseProduct(S_fric).sum());
    out.d_eps[cell] += scale * (d.dKm_deps.cwiseProduct(S_vis).sum() +
                                d.dlambda_deps * s_div +
                                d.dKf_deps.cwiseProduct(S_fric).sum());
    for (int k = 0; k < Dim - 1; ++k)
      out.d_alpha(cell, k) += scale * (d.dKm_dalpha[k].cwiseProduct(S_vis).sum() +
                                       d.dKf_dalpha[k].cwiseProduct(S_fric).sum());
  }
}

/**
 * Gradient of the complete objective at an evaluated design. Requires the
 * factorizations in `ctx` to still correspond to `ev` (i.e. no solve in
 * between): both adjoints are back-substitutions, not new factorizations.
 */
template <int Dim>
GradientBundle<Dim> total_gradient(const TaskSpec<Dim>& task, const DesignField<Dim>& theta,
                                   const Evaluation<Dim>& ev, const EffectiveWeights& eff,
                                   const SolveContexts& ctx,
                                   const SolveTolerances& tol = {}) {
  auto g = GradientBundle<Dim>::zero(task.grid.cell_count());

  // Regularizers touch the design directly, no flow field involved.
  if (eff.d != 0.0) g.d_alpha += eff.d * ev.ld.d_alpha;
  if (eff.a != 0.0) {
    g.d_rho += eff.a * ev.la.d_rho;
    g.d_eps += eff.a * ev.la.d_eps;
  }

  // Outlet mismatch: adjoint of the main solve.
  {
    const auto& sys = ev.main.sys;
    Eigen::VectorXd rhs_free(sys.num_free());
    for (int i = 0; i < sys.num_free(); ++i)
      rhs_free[i] = ev.lf.dL_dv[sys.free_dofs[i]];
    const Eigen::VectorXd w = adjoint_solve(sys, ctx.main, rhs_free, tol);
    accumulate_quadratic_partials(task.grid, theta, task.material, w,
                                  ev.main.state.v, -2.0, g);
  }

  // Dissipated power: explicit energy term plus the adjoint of the
  // augmented solve (its right-hand side is the energy gradient itself).
  if (eff.c != 0.0) {
    const auto& sys = ev.augmented.sys;
    accumulate_quadratic_partials(task.grid, theta, task.material,
                                  ev.augmented.state.v, ev.augmented.state.v,
                                  eff.c, g);
    const Eigen::VectorXd rhs_free =
        2.0 * (sys.K * ev.augmented.state.v_free) - sys.b;
    const Eigen::VectorXd w = adjoint_solve(sys, ctx.augmented, rhs_free, tol);
    accumulate_quadratic_partials(task.grid, theta, task.material, w,
                                  ev.augmented.state.v, -2.0 * eff.c, g);
  }
  return g;
}

/** One finite-difference probe of the gradient checker. */
struct FdSample {
  char kind = '?';  // 'r' = rho, 'e' = eps, 'a'/'b' = angle columns
  int cell = -1;
  double analytic = 0.0;
  double fd = 0.0;
  double rel_err = 0.0;
};

struct FdReport {
  std::vector<FdSample> samples;
  double max_rel_err = 0.0;

  bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

/**
 * Central-difference validation of the adjoint gradient. The neighborhood
 * statistics and the effective weights are frozen at the base design so
 * both sides differentiate the same smooth function. Probes are drawn away
 * from box edges so the stencil never leaves the feasible set.
 *
 * Each sample reports |analytic - fd| over max(|analytic|, |fd|, floor).
 * The denominator floor encodes the absolute-tolerance regime: a loss of
 * magnitude L evaluated in doubles carries ~1e-16 L rounding noise, so a
 * central difference of step h cannot resolve discrepancies below about
 * 1e-16 L / h no matter how exact the gradient is. With the default floor,
 * passing at 1e-4 means every component is right to a relative 1e-4 or to
 * an absolute 1e-8, whichever is looser -- tiny gradients are vouched for
 * absolutely, sizeable ones relatively.
 */
template <int Dim>
FdReport fd_check(const TaskSpec<Dim>& task, const DesignField<Dim>& theta,
                  int samples_per_var = 20, double step = 1e-5,
                  std::uint64_t seed = 0x5eed, double floor = 1e-4) {
  const int n = task.grid.cell_count();
  SolveContexts ctx;
  const auto frozen = FrozenStats<Dim>::compute(task.grid, theta, task.weights.eps0,
                                                task.weights.rho0);
  // Central differences of step h resolve the gradient only down to
  // (solver residual)/h, so the probes solve far below the default
  // forward tolerance.
  SolveTolerances tight;
  tight.primal_rel = 1e-12;
  tight.constraint_abs = 1e-12;
  tight.max_refinements = 40;
  const auto ev = evaluate(task, theta, ctx, &frozen, tight);
  const EffectiveWeights eff = make_effective_weights(task.weights, ev);
  const auto g = total_gradient(task, theta, ev, eff, ctx, tight);

  auto eval_total = [&](const DesignField<Dim>& th) {
    return evaluate(task, th, ctx, &frozen, tight).total(eff);
  };

  std::mt19937_64 rng(seed);
  auto draw = [&](auto interior) {
    for (int tries = 0; tries < 1000; ++tries) {
      const int cell = static_cast<int>(uniform01(rng()) * n) % n;
      if (interior(cell)) return cell;
    }
    throw std::runtime_error("gradient check: no cell is far enough from its bounds");
  };

  FdReport report;
  auto probe = [&](char kind, int cell, double analytic, auto bump) {
    DesignField<Dim> plus = theta, minus = theta;
    bump(plus, +step);
    bump(minus, -step);
    const double fd = (eval_total(plus) - eval_total(minus)) / (2.0 * step);
    FdSample s;
    s.kind = kind;
    s.cell = cell;
    s.analytic = analytic;
    s.fd = fd;
    s.rel_err = std::abs(analytic - fd) /
                std::max(std::max(std::abs(analytic), std::abs(fd)), floor);
    report.max_rel_err = std::max(report.max_rel_err, s.rel_err);
    report.samples.push_back(s);
  };

  for (int i = 0; i < samples_per_var; ++i) {
    const int c = draw([&](int cell) {
      return theta.rho[cell] > step && theta.rho[cell] < 1.0 - step;
    });
    probe('r', c, g.d_rho[c],
          [&](DesignField<Dim>& th, double d) { th.rho[c] += d; });
  }
  for (int i = 0; i < samples_per_var; ++i) {
    const int c = draw([&](int cell) {
      return theta.eps[cell] > step && theta.eps[cell] < theta.eps_upper[cell] - step;
    });
    probe('e', c, g.d_eps[c],
          [&](DesignField<Dim>& th, double d) { th.eps[c] += d; });
  }
  for (int k = 0; k < Dim - 1; ++k) {
    for (int i = 0; i < samples_per_var; ++i) {
      const int c = draw([](int) { return true; });  // angles are unbounded
      probe(static_cast<char>('a' + k), c, g.d_alpha(c, k),
            [&](DesignField<Dim>& th, double d) { th.alpha(c, k) += d; });
    }
  }
  return report;
}

}  // namespace anisoflow
