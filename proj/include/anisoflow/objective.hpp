#pragma once

#include <anisoflow/solver.hpp>
#include <anisoflow/task.hpp>

#include <vector>

namespace anisoflow {

/**
 * Neighborhood statistics frozen at the top of an optimizer iteration:
 * local density extrema over the 3^Dim box around each cell (clipped at
 * the domain boundary) and, for cells in the directional-penalty set,
 * the sign-aligned mean normal of the box. Holding these fixed keeps the
 * regularizers differentiable through one design update; finite-difference
 * probes must reuse the same snapshot.
 */
template <int Dim>
struct FrozenStats {
  Eigen::VectorXd rho_local_max;
  Eigen::VectorXd rho_local_min;
  std::vector<char> member;           // in the directional-penalty set
  std::vector<Vec<Dim>> align_dir;    // unit mean normal; zero if degenerate

  static FrozenStats compute(const GridSpec<Dim>& grid, const DesignField<Dim>& theta,
                             double eps0, double rho0) {
    const int n = grid.cell_count();
    FrozenStats fs;
    fs.rho_local_max.resize(n);
    fs.rho_local_min.resize(n);
    fs.member.assign(n, 0);
    fs.align_dir.assign(n, Vec<Dim>::Zero());

    std::vector<Vec<Dim>> normals(n);
    for (int c = 0; c < n; ++c)
      normals[c] =
          normal_from_alpha(Eigen::Matrix<double, 1, Dim - 1>(theta.alpha.row(c))).n;

    for (int c = 0; c < n; ++c) {
      const auto base = grid.cell_coords(c);
      double lo = theta.rho[c], hi = theta.rho[c];
      Vec<Dim> mean = Vec<Dim>::Zero();
      const int box = Dim == 2 ? 9 : 27;
      for (int k = 0; k < box; ++k) {
        std::array<int, Dim> cc = base;
        int rest = k;
        bool inside = true;
        for (int d = 0; d < Dim; ++d) {
          cc[d] += rest % 3 - 1;
          rest /= 3;
          inside = inside && cc[d] >= 0 && cc[d] < grid.cells[d];
        }
        if (!inside) continue;
        const int nb = grid.cell_index(cc);
        lo = std::min(lo, theta.rho[nb]);
        hi = std::max(hi, theta.rho[nb]);
        const double dot = normals[nb].dot(normals[c]);
        mean += (dot >= 0.0 ? 1.0 : -1.0) * normals[nb];
      }
      fs.rho_local_max[c] = hi;
      fs.rho_local_min[c] = lo;
      fs.member[c] = theta.eps[c] < eps0 && theta.rho[c] > rho0;
      const double len = mean.norm();
      if (len > 1e-12) fs.align_dir[c] = mean / len;
    }
    return fs;
  }
};

/** Per-cell upper bound for eps: cells sitting across a density jump are
 *  forced anisotropic, uniform regions are left free. */
template <int Dim>
Eigen::VectorXd dynamic_eps_bound(const FrozenStats<Dim>& frozen) {
  return (1.0 - (frozen.rho_local_max - frozen.rho_local_min).array())
      .cwiseMax(0.0)
      .matrix();
}

template <int Dim>
Eigen::VectorXd dynamic_eps_bound(const GridSpec<Dim>& grid,
                                  const DesignField<Dim>& theta) {
  return dynamic_eps_bound(FrozenStats<Dim>::compute(grid, theta, 0.5, 0.5));
}

/** Value and velocity-gradient of one loss term. */
struct LossWithVelocityGrad {
  double value = 0.0;
  Eigen::VectorXd dL_dv;  // over full DOFs
};

/**
 * Outlet mismatch: sum over outlet-patch nodes of |v - target|^2, plain
 * nodal sum by default, optionally trapezoid-weighted like a surface
 * integral over the outlet face.
 */
template <int Dim>
LossWithVelocityGrad functional_loss(const GridSpec<Dim>& grid,
                                     const Eigen::VectorXd& v_full,
                                     const std::vector<OutletNode<Dim>>& targets,
                                     bool face_weighted = false) {
  LossWithVelocityGrad out;
  out.dL_dv = Eigen::VectorXd::Zero(grid.dof_count());
  for (const auto& t : targets) {
    double w = 1.0;
    if (face_weighted) {
      const auto c = grid.node_coords(t.node);
      for (int d = 0; d < Dim; ++d) {
        if (d == t.axis) continue;
        const bool rim = c[d] == 0 || c[d] == grid.cells[d];
        w *= grid.spacing() * (rim ? 0.5 : 1.0);
      }
    }
    for (int comp = 0; comp < Dim; ++comp) {
      const double diff = v_full[grid.dof(t.node, comp)] - t.target[comp];
      out.value += w * diff * diff;
      out.dL_dv[grid.dof(t.node, comp)] += 2.0 * w * diff;
    }
  }
  return out;
}

/** Energy of the outlet-pinned (compliance) solve: the full quadratic
 *  form value, i.e. reduced energy plus the Dirichlet offset. */
template <int Dim>
double compliance_loss(const ForwardSolve<Dim>& augmented) {
  return augmented.sys.energy(augmented.state.v_free);
}

/** Direction-smoothness penalty over the frozen alignment field. */
template <int Dim>
struct DirectionalReg {
  double value = 0.0;
  Eigen::Matrix<double, Eigen::Dynamic, Dim - 1> d_alpha;
};

template <int Dim>
DirectionalReg<Dim> directional_reg(const DesignField<Dim>& theta,
                                    const FrozenStats<Dim>& frozen) {
  const int n = theta.size();
  DirectionalReg<Dim> out;
  out.d_alpha.setZero(n, Dim - 1);
  for (int c = 0; c < n; ++c) {
    if (!frozen.member[c]) continue;
    const Vec<Dim>& dir = frozen.align_dir[c];
    if (dir.squaredNorm() == 0.0) continue;  // degenerate neighborhood: skip
    const auto frame =
        normal_from_alpha(Eigen::Matrix<double, 1, Dim - 1>(theta.alpha.row(c)));
    const double cosang = frame.n.dot(dir);
    out.value += 1.0 - std::abs(cosang);
    const double sign = cosang >= 0.0 ? 1.0 : -1.0;
    for (int k = 0; k < Dim - 1; ++k)
      out.d_alpha(c, k) = -sign * frame.dn[k].dot(dir);
  }
  return out;
}

/** Penalty on anisotropic material in the bulk: eps * rho * local density
 *  spread, with the spread frozen. */
template <int Dim>
struct AnisotropicReg {
  double value = 0.0;
  Eigen::VectorXd d_rho;
  Eigen::VectorXd d_eps;
};

template <int Dim>
AnisotropicReg<Dim> anisotropic_reg(const DesignField<Dim>& theta,
                                    const FrozenStats<Dim>& frozen) {
  AnisotropicReg<Dim> out;
  Eigen::ArrayXd spread =
      (frozen.rho_local_max - frozen.rho_local_min).array();
  out.value = (theta.eps.array() * theta.rho.array() * spread).sum();
  out.d_rho = (theta.eps.array() * spread).matrix();
  out.d_eps = (theta.rho.array() * spread).matrix();
  return out;
}

/** The two volume budgets, as raw values g <= 0. */
template <int Dim>
struct VolumeConstraints {
  double g_iso = 0.0;  // sum eps*rho - V_max * n_cells
  double g_all = 0.0;  // sum rho - (V_max + V_b) * n_cells
  double V_iso = 0.0;
  double V_all = 0.0;
  Eigen::VectorXd d_iso_drho, d_iso_deps;  // d g_all / d rho is identically 1
};

template <int Dim>
VolumeConstraints<Dim> volume_constraints(const DesignField<Dim>& theta,
                                          const ObjectiveWeights& w) {
  VolumeConstraints<Dim> out;
  const int n = theta.size();
  out.V_iso = (theta.eps.array() * theta.rho.array()).sum();
  out.V_all = theta.rho.sum();
  out.g_iso = out.V_iso - w.V_max * n;
  out.g_all = out.V_all - (w.V_max + w.V_b) * n;
  out.d_iso_drho = theta.eps;
  out.d_iso_deps = theta.rho;
  return out;
}

}  // namespace anisoflow
