#pragma once

#include <anisoflow/assembly.hpp>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace anisoflow {

/** Raised when a KKT system cannot be solved to tolerance. */
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolveTolerances {
  double primal_rel = 1e-8;      // on |2Kv + C^T q - b|_inf, scaled by 1 + |b|_inf
  double constraint_abs = 1e-10; // on |Cv + c0|_inf
  int max_refinements = 8;
};

/** Solution of one constrained flow solve. */
struct FlowState {
  Eigen::VectorXd v;            // full nodal field, Dirichlet values included
  Eigen::VectorXd v_free;       // reduced solution over free DOFs
  Eigen::VectorXd multipliers;  // one per constraint row (dropped rows: 0)
  double primal_residual = 0.0;
  double constraint_residual = 0.0;
};

/**
 * Direct factorization context for the saddle-point matrix
 * [[2K, C^T], [C, 0]]. The matrix is indefinite, so we use sparse LU with
 * partial pivoting; the symbolic analysis is recomputed only when the
 * sparsity pattern changes, which keeps repeated solves over one design
 * loop cheap. Before factorizing, constraint rows that lost all their
 * coefficients to Dirichlet condensation are dropped (with a warning),
 * and one redundant row is removed when the rows sum to zero, which
 * happens whenever the retained blocks are fully walled in.
 *
 * A dropped row whose offset is nonzero means the pinned data forces net
 * flux through a region no free DOF can balance. For a flow solve that is
 * a configuration error and throws. A solve whose boundary is pinned
 * everywhere (the dissipated-power measurement) hits the same situation
 * whenever the pinned values are not exactly mass-consistent; passing
 * `tolerate_inconsistent` drops such rows with a warning instead, since
 * they cannot influence the minimizer anyway, and they are then excluded
 * from the residual checks.
 */
class KktSolver {
 public:
  template <int Dim>
  void factorize(const StokesSystem<Dim>& sys, bool tolerate_inconsistent = false) {
    n_free_ = sys.num_free();
    const int n_rows_in = sys.num_constraints();
    warnings.clear();
    inconsistent_rows_.clear();

    // --- row preprocessing -------------------------------------------------
    kept_rows_.clear();
    double coeff_scale = 0.0;
    std::vector<double> row_max(n_rows_in, 0.0);
    for (int k = 0; k < sys.C.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(sys.C, k); it; ++it) {
        row_max[it.row()] = std::max(row_max[it.row()], std::abs(it.value()));
        coeff_scale = std::max(coeff_scale, std::abs(it.value()));
      }
    for (int r = 0; r < n_rows_in; ++r) {
      if (row_max[r] <= 1e-14 * std::max(1.0, coeff_scale)) {
        if (std::abs(sys.c0[r]) > 1e-9 * std::max(1.0, coeff_scale)) {
          if (!tolerate_inconsistent)
            throw SolverError(
                "infeasible constraint: block row lost all free DOFs but its "
                "Dirichlet flux is nonzero");
          inconsistent_rows_.push_back(r);
          warnings.push_back("dropping fully pinned constraint row " +
                             std::to_string(r) + " with Dirichlet flux " +
                             std::to_string(sys.c0[r]));
          continue;
        }
        warnings.push_back("dropping numerically empty constraint row " +
                           std::to_string(r));
        continue;
      }
      kept_rows_.push_back(r);
    }

    // --- redundancy guard: rows of C sum to zero when the union of the
    // retained blocks has an all-Dirichlet surface; drop the last row then.
    if (!kept_rows_.empty()) {
      Eigen::VectorXd colsum = Eigen::VectorXd::Zero(n_free_);
      double c0sum = 0.0;
      for (int r : kept_rows_) c0sum += sys.c0[r];
      std::vector<char> keep(n_rows_in, 0);
      for (int r : kept_rows_) keep[r] = 1;
      for (int k = 0; k < sys.C.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(sys.C, k); it; ++it)
          if (keep[it.row()]) colsum[it.col()] += it.value();
      if (colsum.cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, coeff_scale)) {
        if (std::abs(c0sum) > 1e-8 * std::max(1.0, coeff_scale)) {
          if (!tolerate_inconsistent)
            throw SolverError(
                "inconsistent block constraints: enclosed domain carries net "
                "Dirichlet flux");
          // one row must absorb the imbalance the pinned data dictates
          inconsistent_rows_.push_back(kept_rows_.back());
          warnings.push_back("dropping one constraint row to absorb pinned net flux " +
                             std::to_string(c0sum));
          kept_rows_.pop_back();
        } else {
          warnings.push_back("dropping one redundant constraint row (enclosed domain)");
          kept_rows_.pop_back();
        }
      }
    }
    n_rows_ = static_cast<int>(kept_rows_.size());

    // --- assemble the saddle-point matrix ----------------------------------
    const int n = n_free_ + n_rows_;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(sys.K.nonZeros() + 2 * sys.C.nonZeros());
    for (int k = 0; k < sys.K.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(sys.K, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                           2.0 * it.value());
    std::vector<int> row_to_kkt(n_rows_in, -1);
    for (int i = 0; i < n_rows_; ++i) row_to_kkt[kept_rows_[i]] = n_free_ + i;
    for (int k = 0; k < sys.C.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(sys.C, k); it; ++it) {
        const int kr = row_to_kkt[it.row()];
        if (kr < 0) continue;
        trips.emplace_back(kr, static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), kr, it.value());
      }
    Eigen::SparseMatrix<double> kkt(n, n);
    kkt.setFromTriplets(trips.begin(), trips.end());
    kkt.makeCompressed();

    if (n == 0) {  // fully Dirichlet-determined: nothing to factor
      kkt_ = std::move(kkt);
      analyzed_ = false;
      return;
    }

    const bool same_pattern = analyzed_ && pattern_matches(kkt);
    kkt_ = std::move(kkt);
    if (!same_pattern) {
      lu_.analyzePattern(kkt_);
      analyzed_ = true;
    }
    lu_.factorize(kkt_);
    if (lu_.info() != Eigen::Success)
      throw SolverError(
          "singular KKT matrix (e.g. a floating divergence-only region or "
          "redundant constraints)");
  }

  /** One raw solve against the factored matrix. */
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    if (rhs.size() != kkt_.rows())
      throw std::runtime_error("KKT right-hand side has the wrong size");
    if (kkt_.rows() == 0) return Eigen::VectorXd();
    return lu_.solve(rhs);
  }

  /** Solve with iterative refinement until both residual targets hold. */
  Eigen::VectorXd solve_refined(const Eigen::VectorXd& rhs,
                                const SolveTolerances& tol) const {
    if (kkt_.rows() == 0) return Eigen::VectorXd();
    Eigen::VectorXd x = lu_.solve(rhs);
    const double b_scale =
        n_free_ > 0 ? rhs.head(n_free_).cwiseAbs().maxCoeff() : 0.0;
    const double primal_tol = tol.primal_rel * (1.0 + b_scale);
    for (int pass = 0; pass < tol.max_refinements; ++pass) {
      Eigen::VectorXd r = rhs - kkt_ * x;
      const double rp = n_free_ > 0 ? r.head(n_free_).cwiseAbs().maxCoeff() : 0.0;
      const double rc = n_rows_ > 0 ? r.tail(n_rows_).cwiseAbs().maxCoeff() : 0.0;
      if (rp <= primal_tol && rc <= tol.constraint_abs) break;
      x += lu_.solve(r);
    }
    return x;
  }

  int num_free() const { return n_free_; }
  int num_rows() const { return n_rows_; }
  const std::vector<int>& kept_rows() const { return kept_rows_; }
  const std::vector<int>& inconsistent_rows() const { return inconsistent_rows_; }
  const Eigen::SparseMatrix<double>& matrix() const { return kkt_; }

  std::vector<std::string> warnings;

 private:
  bool pattern_matches(const Eigen::SparseMatrix<double>& m) const {
    if (m.rows() != kkt_.rows() || m.nonZeros() != kkt_.nonZeros()) return false;
    for (int k = 0; k <= m.outerSize(); ++k)
      if (m.outerIndexPtr()[k] != kkt_.outerIndexPtr()[k]) return false;
    for (int k = 0; k < m.nonZeros(); ++k)
      if (m.innerIndexPtr()[k] != kkt_.innerIndexPtr()[k]) return false;
    return true;
  }

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
  Eigen::SparseMatrix<double> kkt_;
  std::vector<int> kept_rows_;
  std::vector<int> inconsistent_rows_;
  int n_free_ = 0;
  int n_rows_ = 0;
  bool analyzed_ = false;
};

/**
 * Minimize v^T K v - b^T v over free DOFs subject to C v + c0 = 0, using a
 * previously factored context. Residuals are measured on the returned
 * iterate and must meet the tolerances, otherwise this throws.
 */
template <int Dim>
FlowState solve_kkt(const StokesSystem<Dim>& sys, const KktSolver& solver,
                    const DirichletSet<Dim>* dirichlet = nullptr,
                    const SolveTolerances& tol = {}) {
  const int nf = sys.num_free();
  const int nr = solver.num_rows();
  FlowState state;

  Eigen::VectorXd rhs(nf + nr);
  rhs.head(nf) = sys.b;
  for (int i = 0; i < nr; ++i) rhs[nf + i] = -sys.c0[solver.kept_rows()[i]];

  Eigen::VectorXd x = solver.solve_refined(rhs, tol);
  state.v_free = nf > 0 ? x.head(nf) : Eigen::VectorXd();
  state.multipliers = Eigen::VectorXd::Zero(sys.num_constraints());
  for (int i = 0; i < nr; ++i)
    state.multipliers[solver.kept_rows()[i]] = x[nf + i];

  // Residuals: primal over free DOFs; constraints over ALL original rows,
  // including any the solver dropped (those must hold automatically) --
  // except rows the solver flagged as inconsistent with the pinned data,
  // which were discarded deliberately and cannot hold.
  if (nf > 0) {
    Eigen::VectorXd primal = 2.0 * (sys.K * state.v_free) - sys.b;
    if (sys.num_constraints() > 0)
      primal += sys.C.transpose() * state.multipliers;
    state.primal_residual = primal.cwiseAbs().maxCoeff();
    if (sys.num_constraints() > 0) {
      Eigen::VectorXd cres = sys.C * state.v_free + sys.c0;
      for (int r : solver.inconsistent_rows()) cres[r] = 0.0;
      state.constraint_residual = cres.cwiseAbs().maxCoeff();
    }
    const double primal_tol = tol.primal_rel * (1.0 + sys.b.cwiseAbs().maxCoeff());
    if (!(state.primal_residual <= primal_tol))
      throw SolverError("KKT primal residual " +
                        std::to_string(state.primal_residual) +
                        " exceeds tolerance " + std::to_string(primal_tol));
    if (!(state.constraint_residual <= tol.constraint_abs))
      throw SolverError("block constraint residual " +
                        std::to_string(state.constraint_residual) +
                        " exceeds tolerance");
  }

  state.v = sys.scatter(state.v_free, dirichlet);
  return state;
}

/** Assemble-and-solve convenience wrapper. */
template <int Dim>
struct ForwardSolve {
  StokesSystem<Dim> sys;
  FlowState state;
};

template <int Dim>
ForwardSolve<Dim> solve_flow(const GridSpec<Dim>& grid, const DesignField<Dim>& theta,
                             const MaterialHyperparams& hp,
                             const DirichletSet<Dim>& dirichlet, KktSolver& solver,
                             const SolveTolerances& tol = {}) {
  ForwardSolve<Dim> fs;
  fs.sys = assemble(grid, theta, hp, dirichlet);
  solver.factorize(fs.sys);
  fs.state = solve_kkt(fs.sys, solver, &dirichlet, tol);
  return fs;
}

}  // namespace anisoflow
