#pragma once

#include <Eigen/Dense>

#include <array>
#include <cassert>
#include <stdexcept>

namespace anisoflow {

template <int Dim> using Vec = Eigen::Matrix<double, Dim, 1>;
template <int Dim> using Mat = Eigen::Matrix<double, Dim, Dim>;

/** Number of cell corners (= nodes per element) in Dim dimensions. */
template <int Dim>
inline constexpr int kCorners = 1 << Dim;

/** Local velocity DOFs per element: one Dim-vector per corner. */
template <int Dim>
inline constexpr int kElemDofs = Dim * kCorners<Dim>;

/**
 * Regular axis-aligned grid on [0, Nx*h] x [0, Ny*h] (x [0, Nz*h]).
 * The spacing is h = 1 / max(cells), so the longest axis spans the unit
 * interval. Cells and nodes are numbered lexicographically with x fastest.
 * Cells are grouped into cubes of `block_size` cells per axis for the
 * block divergence constraints; trailing blocks may be partial.
 * block_size == 0 disables the block partition entirely.
 */
template <int Dim>
struct GridSpec {
  static_assert(Dim == 2 || Dim == 3, "grids are 2D or 3D");

  std::array<int, Dim> cells{};
  int block_size = Dim == 2 ? 8 : 4;

  GridSpec() = default;

  GridSpec(std::array<int, Dim> cells_per_axis, int block)
      : cells(cells_per_axis), block_size(block) {
    for (int n : cells)
      if (n < 1) throw std::runtime_error("grid needs at least one cell per axis");
    if (block_size < 0) throw std::runtime_error("block size must be >= 0");
  }

  /** Cube grid with n cells per axis and the default block size. */
  static GridSpec cube(int n) {
    GridSpec g;
    g.cells.fill(n);
    return GridSpec(g.cells, g.block_size);
  }

  static GridSpec cube(int n, int block) {
    GridSpec g;
    g.cells.fill(n);
    return GridSpec(g.cells, block);
  }

  double spacing() const {
    int longest = cells[0];
    for (int n : cells) longest = std::max(longest, n);
    return 1.0 / longest;
  }

  /** Cell volume (area in 2D). */
  double cell_volume() const {
    double w = 1.0;
    for (int d = 0; d < Dim; ++d) w *= spacing();
    return w;
  }

  int nodes_along(int axis) const { return cells[axis] + 1; }

  int cell_count() const {
    int n = 1;
    for (int d = 0; d < Dim; ++d) n *= cells[d];
    return n;
  }

  int node_count() const {
    int n = 1;
    for (int d = 0; d < Dim; ++d) n *= cells[d] + 1;
    return n;
  }

  int dof_count() const { return Dim * node_count(); }

  int cell_index(const std::array<int, Dim>& c) const {
    int id = 0;
    for (int d = Dim - 1; d >= 0; --d) {
      assert(c[d] >= 0 && c[d] < cells[d]);
      id = id * cells[d] + c[d];
    }
    return id;
  }

  std::array<int, Dim> cell_coords(int id) const {
    std::array<int, Dim> c{};
    for (int d = 0; d < Dim; ++d) {
      c[d] = id % cells[d];
      id /= cells[d];
    }
    return c;
  }

  int node_index(const std::array<int, Dim>& c) const {
    int id = 0;
    for (int d = Dim - 1; d >= 0; --d) {
      assert(c[d] >= 0 && c[d] <= cells[d]);
      id = id * (cells[d] + 1) + c[d];
    }
    return id;
  }

  std::array<int, Dim> node_coords(int id) const {
    std::array<int, Dim> c{};
    for (int d = 0; d < Dim; ++d) {
      c[d] = id % (cells[d] + 1);
      id /= cells[d] + 1;
    }
    return c;
  }

  /** Physical position of a node. */
  Vec<Dim> node_position(int node) const {
    auto c = node_coords(node);
    Vec<Dim> x;
    for (int d = 0; d < Dim; ++d) x[d] = c[d] * spacing();
    return x;
  }

  /** Cell-center position. */
  Vec<Dim> cell_center(int cell) const {
    auto c = cell_coords(cell);
    Vec<Dim> x;
    for (int d = 0; d < Dim; ++d) x[d] = (c[d] + 0.5) * spacing();
    return x;
  }

  /**
   * Node ids of a cell's corners. Corner a has offset bit d of a along
   * axis d, so corners are ordered x-fastest, matching node numbering.
   */
  std::array<int, kCorners<Dim>> cell_nodes(int cell) const {
    auto base = cell_coords(cell);
    std::array<int, kCorners<Dim>> nodes{};
    for (int a = 0; a < kCorners<Dim>; ++a) {
      std::array<int, Dim> c = base;
      for (int d = 0; d < Dim; ++d) c[d] += (a >> d) & 1;
      nodes[a] = node_index(c);
    }
    return nodes;
  }

  /** Velocity DOF id for (node, component); DOFs are node-major. */
  int dof(int node, int comp) const { return node * Dim + comp; }

  int blocks_along(int axis) const {
    assert(block_size > 0);
    return (cells[axis] + block_size - 1) / block_size;
  }

  int block_count() const {
    if (block_size == 0) return 0;
    int n = 1;
    for (int d = 0; d < Dim; ++d) n *= blocks_along(d);
    return n;
  }

  /** Block owning a cell: integer division of cell coords by block_size. */
  int block_of(int cell) const {
    assert(block_size > 0);
    auto c = cell_coords(cell);
    int id = 0;
    for (int d = Dim - 1; d >= 0; --d)
      id = id * blocks_along(d) + c[d] / block_size;
    return id;
  }
};

/** Shape values and physical-space gradients of all corner basis
 *  functions at a reference point p in [0,1]^Dim. */
template <int Dim>
struct ShapeEval {
  std::array<double, kCorners<Dim>> value{};
  std::array<Vec<Dim>, kCorners<Dim>> grad{};
};

/**
 * Multilinear (bilinear/trilinear) hat functions on the reference cell.
 * N_a(p) = prod_d (p_d if corner bit set, else 1 - p_d); gradients are
 * mapped to physical coordinates by the 1/h chain-rule factor.
 */
template <int Dim>
ShapeEval<Dim> shape_eval(const Vec<Dim>& p, double h) {
  ShapeEval<Dim> s;
  for (int a = 0; a < kCorners<Dim>; ++a) {
    double v = 1.0;
    for (int d = 0; d < Dim; ++d)
      v *= ((a >> d) & 1) ? p[d] : 1.0 - p[d];
    s.value[a] = v;
    for (int d = 0; d < Dim; ++d) {
      double g = ((a >> d) & 1) ? 1.0 : -1.0;
      for (int e = 0; e < Dim; ++e) {
        if (e == d) continue;
        g *= ((a >> e) & 1) ? p[e] : 1.0 - p[e];
      }
      s.grad[a][d] = g / h;
    }
  }
  return s;
}

/**
 * Tensor-product 2-point Gauss-Legendre rule on [0,1]^Dim.
 * Weights are uniform and sum to one, so integrals over a cell are
 * cell_volume * sum_q w_q f(x_q). Exact for multilinear integrands
 * and products of two of them.
 */
template <int Dim>
struct QuadratureRule {
  static constexpr int kPoints = 1 << Dim;
  std::array<Vec<Dim>, kPoints> point{};
  std::array<double, kPoints> weight{};

  static const QuadratureRule& gauss() {
    static const QuadratureRule rule = [] {
      QuadratureRule r;
      const double lo = 0.5 * (1.0 - 1.0 / std::sqrt(3.0));
      const double hi = 0.5 * (1.0 + 1.0 / std::sqrt(3.0));
      for (int q = 0; q < kPoints; ++q) {
        for (int d = 0; d < Dim; ++d)
          r.point[q][d] = ((q >> d) & 1) ? hi : lo;
        r.weight[q] = 1.0 / kPoints;
      }
      return r;
    }();
    return rule;
  }
};

}  // namespace anisoflow
