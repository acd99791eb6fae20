#pragma once

#include <anisoflow/grid.hpp>
#include <anisoflow/material.hpp>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace anisoflow {

/**
 * Velocity Dirichlet assignments, one value per pinned DOF. Re-pinning a
 * DOF with the same value is a no-op; conflicting values are an error.
 */
template <int Dim>
class DirichletSet {
 public:
  void pin(int dof, double value) {
    auto [it, inserted] = values_.emplace(dof, value);
    if (!inserted && it->second != value)
      throw std::runtime_error("DOF pinned twice with different values");
  }

  void pin_node(int node, const Vec<Dim>& v) {
    for (int c = 0; c < Dim; ++c) pin(node * Dim + c, v[c]);
  }

  bool contains(int dof) const { return values_.count(dof) > 0; }

  double value(int dof) const {
    auto it = values_.find(dof);
    if (it == values_.end()) throw std::runtime_error("DOF is not pinned");
    return it->second;
  }

  int size() const { return static_cast<int>(values_.size()); }

  /** Union of two assignments; conflicts are an error. */
  DirichletSet merged(const DirichletSet& other) const {
    DirichletSet out = *this;
    for (const auto& [dof, v] : other.values_) out.pin(dof, v);
    return out;
  }

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

 private:
  std::map<int, double> values_;
};

/** Local velocity DOF id inside an element: corner-major, component-minor. */
inline constexpr int local_dof(int corner, int comp, int dim) {
  return corner * dim + comp;
}

/**
 * Flux functional of one cell as coefficients over its local DOFs:
 * f^T v_e is the net outflux, computed from per-face averages of the
 * normal velocity (exact for multilinear fields). The coefficient of
 * component c at corner a is +-h^(Dim-1)/2^(Dim-1), sign by face side.
 */
template <int Dim>
Eigen::Matrix<double, kElemDofs<Dim>, 1> cell_flux_coefficients(
    const GridSpec<Dim>& grid) {
  Eigen::Matrix<double, kElemDofs<Dim>, 1> f;
  double face_weight = 1.0;
  for (int d = 0; d < Dim - 1; ++d) face_weight *= grid.spacing() / 2.0;
  for (int a = 0; a < kCorners<Dim>; ++a)
    for (int c = 0; c < Dim; ++c)
      f[local_dof(a, c, Dim)] = (((a >> c) & 1) ? face_weight : -face_weight);
  return f;
}

/**
 * Viscous energy matrix of one cell: v_e^T L v_e = mu * int_C |grad(v) Km^(1/2)|_F^2,
 * evaluated with the tensor-product Gauss rule via the trace identity
 * trace(grad(v) Km grad(v)^T), which avoids any matrix square root.
 * Identical scalar blocks couple same-component DOFs only.
 */
template <int Dim>
Eigen::Matrix<double, kElemDofs<Dim>, kElemDofs<Dim>> element_viscosity(
    const Mat<Dim>& Km, double mu, const GridSpec<Dim>& grid) {
  using LocalMat = Eigen::Matrix<double, kElemDofs<Dim>, kElemDofs<Dim>>;
  const auto& rule = QuadratureRule<Dim>::gauss();
  const double w_cell = grid.cell_volume();

  Eigen::Matrix<double, kCorners<Dim>, kCorners<Dim>> scalar;
  scalar.setZero();
  for (int q = 0; q < rule.kPoints; ++q) {
    const auto s = shape_eval<Dim>(rule.point[q], grid.spacing());
    for (int a = 0; a < kCorners<Dim>; ++a)
      for (int b = 0; b < kCorners<Dim>; ++b)
        scalar(a, b) += rule.weight[q] * w_cell * s.grad[a].dot(Km * s.grad[b]);
  }

  LocalMat L = LocalMat::Zero();
  for (int a = 0; a < kCorners<Dim>; ++a)
    for (int b = 0; b < kCorners<Dim>; ++b)
      for (int c = 0; c < Dim; ++c)
        L(local_dof(a, c, Dim), local_dof(b, c, Dim)) = mu * scalar(a, b);
  return L;
}

/**
 * Divergence energy matrix of one cell: the rank-one form
 * lambda * W * (f^T v / W)^2 with W the cell volume.
 */
template <int Dim>
Eigen::Matrix<double, kElemDofs<Dim>, kElemDofs<Dim>> element_divergence(
    double lambda, const GridSpec<Dim>& grid) {
  const auto f = cell_flux_coefficients(grid);
  return (lambda / grid.cell_volume()) * (f * f.transpose());
}

/**
 * Friction energy matrix of one cell: vertex quadrature of v^T Kf v,
 * (W/2^Dim) * sum over corners, coupling components at each corner.
 */
template <int Dim>
Eigen::Matrix<double, kElemDofs<Dim>, kElemDofs<Dim>> element_friction(
    const Mat<Dim>& Kf, const GridSpec<Dim>& grid) {
  using LocalMat = Eigen::Matrix<double, kElemDofs<Dim>, kElemDofs<Dim>>;
  LocalMat M = LocalMat::Zero();
  const double w = grid.cell_volume() / kCorners<Dim>;
  for (int a = 0; a < kCorners<Dim>; ++a)
    for (int c = 0; c < Dim; ++c)
      for (int e = 0; e < Dim; ++e)
        M(local_dof(a, c, Dim), local_dof(a, e, Dim)) = w * Kf(c, e);
  return M;
}

/** Full energy matrix of one cell. */
template <int Dim>
Eigen::Matrix<double, kElemDofs<Dim>, kElemDofs<Dim>> element_matrix(
    const Mat<Dim>& Km, const Mat<Dim>& Kf, double lambda, double mu,
    const GridSpec<Dim>& grid) {
  return element_viscosity(Km, mu, grid) + element_divergence(lambda, grid) +
         element_friction(Kf, grid);
}

/**
 * Condensed quadratic program for one design: energy
 * E(v) = v^T K v - b^T v + e0 over free DOFs (K is the Hessian half;
 * the KKT solve applies the factor 2), subject to the block divergence
 * constraints C v + c0 = 0. Row r of C aggregates the flux functionals
 * of block `block_of_row[r]`; interior faces cancel in the sum, so each
 * row only sees the block's surface DOFs.
 */
template <int Dim>
struct StokesSystem {
  Eigen::SparseMatrix<double> K;
  Eigen::VectorXd b;
  double e0 = 0.0;
  Eigen::SparseMatrix<double> C;
  Eigen::VectorXd c0;
  std::vector<int> block_of_row;

  std::vector<int> free_dofs;    // free index -> global DOF
  std::vector<int> free_index;   // global DOF -> free index or -1
  std::vector<std::string> warnings;

  int num_free() const { return static_cast<int>(free_dofs.size()); }
  int num_constraints() const { return static_cast<int>(C.rows()); }

  /** Scatter a free-DOF vector into a full-DOF vector, filling pinned
   *  entries from the Dirichlet set (or zero for adjoint fields). */
  Eigen::VectorXd scatter(const Eigen::VectorXd& v_free,
                          const DirichletSet<Dim>* dirichlet = nullptr) const {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(free_index.size());
    for (int i = 0; i < num_free(); ++i) full[free_dofs[i]] = v_free[i];
    if (dirichlet)
      for (const auto& [dof, value] : *dirichlet) full[dof] = value;
    return full;
  }

  /** Energy of the free-DOF vector, Dirichlet part folded in. */
  double energy(const Eigen::VectorXd& v_free) const {
    return v_free.dot(K * v_free) - b.dot(v_free) + e0;
  }
};

template <int Dim>
StokesSystem<Dim> assemble(const GridSpec<Dim>& grid,
                           const MaterialTensors<Dim>& tensors, double mu,
                           const DirichletSet<Dim>& dirichlet) {
  if (tensors.size() != grid.cell_count())
    throw std::runtime_error("tensor field does not match the grid");
  const int n_dofs = grid.dof_count();
  for (const auto& [dof, value] : dirichlet) {
    if (dof < 0 || dof >= n_dofs)
      throw std::runtime_error("Dirichlet DOF out of range");
    (void)value;
  }

  StokesSystem<Dim> sys;
  sys.free_index.assign(n_dofs, -1);
  for (int dof = 0; dof < n_dofs; ++dof) {
    if (!dirichlet.contains(dof)) {
      sys.free_index[dof] = static_cast<int>(sys.free_dofs.size());
      sys.free_dofs.push_back(dof);
    }
  }
  const int n_free = sys.num_free();
  sys.b = Eigen::VectorXd::Zero(n_free);
  sys.e0 = 0.0;

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(grid.cell_count()) * kElemDofs<Dim> * kElemDofs<Dim>);
  std::array<int, kElemDofs<Dim>> gdof{};
  for (int cell = 0; cell < grid.cell_count(); ++cell) {
    const auto Le = element_matrix(tensors.Km[cell], tensors.Kf[cell],
                                   tensors.lambda[cell], mu, grid);
    const auto nodes = grid.cell_nodes(cell);
    for (int a = 0; a < kCorners<Dim>; ++a)
      for (int c = 0; c < Dim; ++c)
        gdof[local_dof(a, c, Dim)] = grid.dof(nodes[a], c);

    for (int i = 0; i < kElemDofs<Dim>; ++i) {
      const int fi = sys.free_index[gdof[i]];
      for (int j = 0; j < kElemDofs<Dim>; ++j) {
        const int fj = sys.free_index[gdof[j]];
        if (fi >= 0 && fj >= 0) {
          trips.emplace_back(fi, fj, Le(i, j));
        } else if (fi >= 0) {
          sys.b[fi] -= 2.0 * Le(i, j) * dirichlet.value(gdof[j]);
        } else if (fj < 0) {
          sys.e0 += Le(i, j) * dirichlet.value(gdof[i]) * dirichlet.value(gdof[j]);
        }
      }
    }
  }
  sys.K.resize(n_free, n_free);
  sys.K.setFromTriplets(trips.begin(), trips.end());

  // Block divergence rows: one zero-net-flux constraint per block that
  // still owns at least one free DOF. All-Dirichlet blocks are dropped.
  if (grid.block_size > 0) {
    const auto f = cell_flux_coefficients(grid);
    const int n_blocks = grid.block_count();
    std::vector<std::map<int, double>> row_coeffs(n_blocks);
    std::vector<double> row_c0(n_blocks, 0.0);
    std::vector<char> has_free(n_blocks, 0);
    for (int cell = 0; cell < grid.cell_count(); ++cell) {
      const int blk = grid.block_of(cell);
      const auto nodes = grid.cell_nodes(cell);
      for (int a = 0; a < kCorners<Dim>; ++a) {
        for (int c = 0; c < Dim; ++c) {
          const int dof = grid.dof(nodes[a], c);
          const double coeff = f[local_dof(a, c, Dim)];
          const int fi = sys.free_index[dof];
          if (fi >= 0) {
            row_coeffs[blk][fi] += coeff;
            has_free[blk] = 1;
          } else {
            row_c0[blk] += coeff * dirichlet.value(dof);
          }
        }
      }
    }

    std::vector<Eigen::Triplet<double>> ctrips;
    std::vector<double> c0_vals;
    for (int blk = 0; blk < n_blocks; ++blk) {
      if (!has_free[blk]) continue;
      const int row = static_cast<int>(c0_vals.size());
      for (const auto& [fi, coeff] : row_coeffs[blk])
        ctrips.emplace_back(row, fi, coeff);
      c0_vals.push_back(row_c0[blk]);
      sys.block_of_row.push_back(blk);
    }
    sys.C.resize(static_cast<int>(c0_vals.size()), n_free);
    sys.C.setFromTriplets(ctrips.begin(), ctrips.end());
    sys.c0 = Eigen::Map<Eigen::VectorXd>(c0_vals.data(), c0_vals.size());
  } else {
    sys.C.resize(0, n_free);
    sys.c0.resize(0);
  }
  return sys;
}

template <int Dim>
StokesSystem<Dim> assemble(const GridSpec<Dim>& grid, const DesignField<Dim>& theta,
                           const MaterialHyperparams& hp,
                           const DirichletSet<Dim>& dirichlet) {
  return assemble(grid, build_tensors(theta, hp), hp.mu, dirichlet);
}

}  // namespace anisoflow
