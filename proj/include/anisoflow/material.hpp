#pragma once

#include <anisoflow/grid.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace anisoflow {

/**
 * Scalar knobs of the material model. The friction magnitudes span fluid
 * (kf_min, effectively transparent) to solid (kf_max, effectively no-slip);
 * q shapes the convex interpolation between them. lambda penalizes cell
 * divergence, with exponent p pushing intermediate densities toward 0/1.
 */
struct MaterialHyperparams {
  double kf_min = 2.5e-4;
  double kf_max = 1e5;
  double q = 0.1;
  double lambda_min = 0.1;
  double lambda_max = 1e3;
  double p = 12.0;
  double mu = 1.0;
  // Ablation switches: replace the oriented tensors by their isotropic
  // counterparts (Km = I, Kf = kf(eps*rho) I) while keeping magnitudes.
  bool km_isotropic = false;
  bool kf_isotropic = false;

  void validate() const {
    if (!(kf_min >= 0.0) || !(kf_max > kf_min))
      throw std::runtime_error("friction bounds need 0 <= kf_min < kf_max");
    if (!(q > 0.0)) throw std::runtime_error("friction shape q must be positive");
    if (!(lambda_min >= 0.0) || !(lambda_max >= 0.0))
      throw std::runtime_error("divergence weights must be nonnegative");
    if (!(p >= 1.0)) throw std::runtime_error("divergence exponent p must be >= 1");
    if (!(mu > 0.0)) throw std::runtime_error("viscosity mu must be positive");
  }
};

/**
 * Per-cell design variables: isotropic density rho in [0,1], anisotropy
 * mix eps in [0, eps_upper], and the normal angles alpha (one angle in
 * 2D, polar/azimuthal pair in 3D). Columns of alpha are angle components.
 */
template <int Dim>
struct DesignField {
  Eigen::VectorXd rho;
  Eigen::VectorXd eps;
  Eigen::Matrix<double, Eigen::Dynamic, Dim - 1> alpha;
  Eigen::VectorXd eps_upper;  // per-cell dynamic cap on eps

  static DesignField uniform(int n_cells, double rho0, double eps0) {
    DesignField f;
    f.rho = Eigen::VectorXd::Constant(n_cells, rho0);
    f.eps = Eigen::VectorXd::Constant(n_cells, eps0);
    f.alpha.setZero(n_cells, Dim - 1);
    f.eps_upper = Eigen::VectorXd::Ones(n_cells);
    return f;
  }

  int size() const { return static_cast<int>(rho.size()); }

  void validate() const {
    const int n = size();
    if (eps.size() != n || alpha.rows() != n || eps_upper.size() != n)
      throw std::runtime_error("design field arrays disagree on cell count");
    for (int c = 0; c < n; ++c) {
      if (!(rho[c] >= 0.0 && rho[c] <= 1.0))
        throw std::runtime_error("rho out of [0,1]");
      if (!(eps[c] >= 0.0 && eps[c] <= eps_upper[c] + 1e-12))
        throw std::runtime_error("eps out of [0, eps_upper]");
      if (!alpha.row(c).allFinite())
        throw std::runtime_error("alpha must be finite");
    }
  }
};

/** Unit normal for given angles plus its derivatives w.r.t. each angle. */
template <int Dim>
struct NormalFrame {
  Vec<Dim> n;
  std::array<Vec<Dim>, Dim - 1> dn;
};

inline NormalFrame<2> normal_from_alpha(const Eigen::Matrix<double, 1, 1>& a) {
  NormalFrame<2> f;
  const double c = std::cos(a[0]), s = std::sin(a[0]);
  f.n = Vec<2>{c, s};
  f.dn[0] = Vec<2>{-s, c};
  return f;
}

inline NormalFrame<3> normal_from_alpha(const Eigen::Matrix<double, 1, 2>& a) {
  // a = (polar, azimuth): n = (sin p cos z, sin p sin z, cos p)
  NormalFrame<3> f;
  const double sp = std::sin(a[0]), cp = std::cos(a[0]);
  const double sz = std::sin(a[1]), cz = std::cos(a[1]);
  f.n = Vec<3>{sp * cz, sp * sz, cp};
  f.dn[0] = Vec<3>{cp * cz, cp * sz, -sp};
  f.dn[1] = Vec<3>{-sp * sz, sp * cz, 0.0};
  return f;
}

/** Friction magnitude k_f(rho) and its derivative: a convex rational
 *  interpolation from kf_max at rho=0 down to kf_min at rho=1. */
inline std::pair<double, double> kf_interp(double rho, const MaterialHyperparams& hp) {
  // Written as a convex combination so both endpoints evaluate exactly.
  const double denom = rho + hp.q;
  const double k = (hp.kf_max * hp.q * (1.0 - rho) + hp.kf_min * rho * (1.0 + hp.q)) / denom;
  const double dk = (hp.kf_min - hp.kf_max) * (1.0 + hp.q) * hp.q / (denom * denom);
  return {k, dk};
}

/** Divergence weight lambda(rho, eps) and its partials. */
inline std::array<double, 3> lambda_interp(double rho, double eps,
                                           const MaterialHyperparams& hp) {
  const double t = 1.0 - (1.0 - eps) * rho;  // 1 = fluid or solid, 0 = free-slip
  const double tp = std::pow(t, hp.p);
  const double lam = hp.lambda_min + tp * hp.lambda_max;
  const double chain = hp.p * std::pow(t, hp.p - 1.0) * hp.lambda_max;
  const double dlam_drho = -chain * (1.0 - eps);
  const double dlam_deps = chain * rho;
  return {lam, dlam_drho, dlam_deps};
}

/** Material tensors of one cell. */
template <int Dim>
struct CellMaterial {
  Mat<Dim> Km;      // viscous permeability: damps gradients along n
  Mat<Dim> Kf;      // friction: damps velocity along n / in solid
  double lambda;    // divergence penalty weight
  Vec<Dim> n;       // unit normal
};

template <int Dim>
CellMaterial<Dim> cell_material(double rho, double eps,
                                const Eigen::Matrix<double, 1, Dim - 1>& alpha,
                                const MaterialHyperparams& hp) {
  CellMaterial<Dim> m;
  const auto frame = normal_from_alpha(alpha);
  m.n = frame.n;
  const Mat<Dim> nn = frame.n * frame.n.transpose();

  if (hp.km_isotropic)
    m.Km = Mat<Dim>::Identity();
  else
    m.Km = Mat<Dim>::Identity() - (1.0 - eps) * rho * nn;

  const auto [k_rho, dk_rho] = kf_interp(rho, hp);
  const auto [k_mix, dk_mix] = kf_interp(eps * rho, hp);
  (void)dk_rho;
  (void)dk_mix;
  if (hp.kf_isotropic)
    m.Kf = k_mix * Mat<Dim>::Identity();
  else
    m.Kf = k_rho * Mat<Dim>::Identity() + (k_mix - k_rho) * nn;

  m.lambda = lambda_interp(rho, eps, hp)[0];
  return m;
}

/** Tensor fields for all cells. */
template <int Dim>
struct MaterialTensors {
  std::vector<Mat<Dim>> Km;
  std::vector<Mat<Dim>> Kf;
  Eigen::VectorXd lambda;
  std::vector<Vec<Dim>> n;

  int size() const { return static_cast<int>(Km.size()); }
};

template <int Dim>
MaterialTensors<Dim> build_tensors(const DesignField<Dim>& theta,
                                   const MaterialHyperparams& hp) {
  hp.validate();
  theta.validate();
  const int n = theta.size();
  MaterialTensors<Dim> out;
  out.Km.resize(n);
  out.Kf.resize(n);
  out.lambda.resize(n);
  out.n.resize(n);
  for (int c = 0; c < n; ++c) {
    auto m = cell_material<Dim>(theta.rho[c], theta.eps[c], theta.alpha.row(c), hp);
    out.Km[c] = m.Km;
    out.Kf[c] = m.Kf;
    out.lambda[c] = m.lambda;
    out.n[c] = m.n;
  }
  return out;
}

/** Partial derivatives of one cell's tensors w.r.t. its design variables. */
template <int Dim>
struct TensorPartials {
  Mat<Dim> dKm_drho, dKm_deps;
  std::array<Mat<Dim>, Dim - 1> dKm_dalpha;
  Mat<Dim> dKf_drho, dKf_deps;
  std::array<Mat<Dim>, Dim - 1> dKf_dalpha;
  double dlambda_drho, dlambda_deps;
};

template <int Dim>
TensorPartials<Dim> tensor_partials(double rho, double eps,
                                    const Eigen::Matrix<double, 1, Dim - 1>& alpha,
                                    const MaterialHyperparams& hp) {
  TensorPartials<Dim> d;
  const auto frame = normal_from_alpha(alpha);
  const Mat<Dim> nn = frame.n * frame.n.transpose();
  std::array<Mat<Dim>, Dim - 1> dnn;  // symmetrized d(n n^T)/dalpha_k
  for (int k = 0; k < Dim - 1; ++k)
    dnn[k] = frame.dn[k] * frame.n.transpose() + frame.n * frame.dn[k].transpose();

  if (hp.km_isotropic) {
    d.dKm_drho.setZero();
    d.dKm_deps.setZero();
    for (auto& m : d.dKm_dalpha) m.setZero();
  } else {
    d.dKm_drho = -(1.0 - eps) * nn;
    d.dKm_deps = rho * nn;
    for (int k = 0; k < Dim - 1; ++k)
      d.dKm_dalpha[k] = -(1.0 - eps) * rho * dnn[k];
  }

  const auto [k_rho, dk_rho] = kf_interp(rho, hp);
  const auto [k_mix, dk_mix] = kf_interp(eps * rho, hp);
  if (hp.kf_isotropic) {
    d.dKf_drho = dk_mix * eps * Mat<Dim>::Identity();
    d.dKf_deps = dk_mix * rho * Mat<Dim>::Identity();
    for (auto& m : d.dKf_dalpha) m.setZero();
  } else {
    d.dKf_drho = dk_rho * Mat<Dim>::Identity() + (dk_mix * eps - dk_rho) * nn;
    d.dKf_deps = dk_mix * rho * nn;
    for (int k = 0; k < Dim - 1; ++k)
      d.dKf_dalpha[k] = (k_mix - k_rho) * dnn[k];
  }

  const auto lam = lambda_interp(rho, eps, hp);
  d.dlambda_drho = lam[1];
  d.dlambda_deps = lam[2];
  return d;
}

}  // namespace anisoflow
