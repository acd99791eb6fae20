#include <anisoflow/material.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace anisoflow;

namespace {

Eigen::Matrix<double, 1, 1> ang(double a) {
  Eigen::Matrix<double, 1, 1> m;
  m << a;
  return m;
}

Eigen::Matrix<double, 1, 2> ang(double p, double z) {
  Eigen::Matrix<double, 1, 2> m;
  m << p, z;
  return m;
}

}  // namespace

TEST_CASE("friction interpolation hits its endpoints and midpoint value") {
  MaterialHyperparams hp;
  hp.kf_min = 0.0;
  hp.kf_max = 1e5;
  hp.q = 0.1;
  CHECK(kf_interp(0.0, hp).first == Catch::Approx(1e5).margin(1e-9));
  CHECK(kf_interp(1.0, hp).first == Catch::Approx(0.0).margin(1e-9));
  // rho = 0.1: 1e5 * (1 - 0.1*1.1/0.2) = 4.5e4
  CHECK(kf_interp(0.1, hp).first == Catch::Approx(4.5e4).epsilon(1e-12));

  MaterialHyperparams def;
  CHECK(kf_interp(0.0, def).first == Catch::Approx(def.kf_max).epsilon(1e-14));
  CHECK(kf_interp(1.0, def).first == Catch::Approx(def.kf_min).epsilon(1e-12));
}

TEST_CASE("friction interpolation is strictly decreasing in rho") {
  MaterialHyperparams hp;
  double prev = kf_interp(0.0, hp).first;
  for (int i = 1; i <= 100; ++i) {
    double k = kf_interp(i / 100.0, hp).first;
    CHECK(k < prev);
    prev = k;
  }
}

TEST_CASE("divergence weight at a half-mixed cell") {
  MaterialHyperparams hp;  // lambda_min=0.1, lambda_max=1e3, p=12
  auto lam = lambda_interp(1.0, 0.5, hp);
  CHECK(lam[0] == Catch::Approx(0.344140625).epsilon(1e-12));
}

TEST_CASE("normals are unit length with orthogonal derivatives") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    auto f2 = normal_from_alpha(ang(unif(rng)));
    CHECK(f2.n.norm() == Catch::Approx(1.0).margin(1e-14));
    CHECK(std::abs(f2.n.dot(f2.dn[0])) < 1e-14);

    auto f3 = normal_from_alpha(ang(unif(rng), unif(rng)));
    CHECK(f3.n.norm() == Catch::Approx(1.0).margin(1e-14));
    CHECK(std::abs(f3.n.dot(f3.dn[0])) < 1e-14);
    CHECK(std::abs(f3.n.dot(f3.dn[1])) < 1e-14);
  }
}

TEST_CASE("normal derivatives match finite differences") {
  const double h = 1e-7;
  auto f = normal_from_alpha(ang(0.4));
  auto fp = normal_from_alpha(ang(0.4 + h));
  auto fm = normal_from_alpha(ang(0.4 - h));
  Vec<2> fd = (fp.n - fm.n) / (2 * h);
  CHECK((fd - f.dn[0]).norm() < 1e-8);

  auto g = normal_from_alpha(ang(0.7, -1.2));
  for (int k = 0; k < 2; ++k) {
    auto ap = ang(0.7, -1.2);
    auto am = ap;
    ap[k] += h;
    am[k] -= h;
    Vec<3> fd3 = (normal_from_alpha(ap).n - normal_from_alpha(am).n) / (2 * h);
    CHECK((fd3 - g.dn[k]).norm() < 1e-8);
  }
}

TEST_CASE("limit states: fluid, solid, free-slip") {
  MaterialHyperparams hp;
  const double a = 0.6;
  const Vec<2> n = normal_from_alpha(ang(a)).n;
  const Mat<2> nn = n * n.transpose();

  // fluid: eps = 1, rho = 1
  auto fluid = cell_material<2>(1.0, 1.0, ang(a), hp);
  CHECK((fluid.Km - Mat<2>::Identity()).norm() < 1e-14);
  CHECK(fluid.Kf.norm() <= 2 * hp.kf_min + 1e-14);
  CHECK(fluid.lambda == Catch::Approx(hp.lambda_min + hp.lambda_max).epsilon(1e-14));

  // solid: rho = 0 (any eps)
  auto solid = cell_material<2>(0.0, 0.3, ang(a), hp);
  CHECK((solid.Km - Mat<2>::Identity()).norm() < 1e-14);
  CHECK((solid.Kf - hp.kf_max * Mat<2>::Identity()).norm() < 1e-9);
  CHECK(solid.lambda == Catch::Approx(hp.lambda_min + hp.lambda_max).epsilon(1e-14));

  // free-slip wall: eps = 0, rho = 1: transparent along the tangent,
  // strongly damped along the normal, divergence penalty released
  auto slip = cell_material<2>(1.0, 0.0, ang(a), hp);
  CHECK((slip.Km - (Mat<2>::Identity() - nn)).norm() < 1e-14);
  Mat<2> expected_kf = hp.kf_min * Mat<2>::Identity() + (hp.kf_max - hp.kf_min) * nn;
  CHECK((slip.Kf - expected_kf).norm() / hp.kf_max < 1e-12);
  CHECK(slip.lambda == Catch::Approx(hp.lambda_min).epsilon(1e-14));
}

TEST_CASE("tensor eigenvalues stay inside their admissible ranges") {
  MaterialHyperparams hp;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-4.0, 4.0);
  for (int i = 0; i < 200; ++i) {
    const double rho = unif(rng), eps = unif(rng);
    auto m = cell_material<2>(rho, eps, ang(angle(rng)), hp);
    Eigen::SelfAdjointEigenSolver<Mat<2>> km(m.Km), kf(m.Kf);
    CHECK(km.eigenvalues().minCoeff() >= -1e-14);
    CHECK(km.eigenvalues().maxCoeff() <= 1.0 + 1e-14);
    CHECK(kf.eigenvalues().minCoeff() >= hp.kf_min - 1e-9);
    CHECK(kf.eigenvalues().maxCoeff() <= hp.kf_max + 1e-9);
    CHECK(m.lambda >= hp.lambda_min - 1e-14);
    CHECK(m.lambda <= hp.lambda_min + hp.lambda_max + 1e-14);

    auto m3 = cell_material<3>(rho, eps, ang(angle(rng), angle(rng)), hp);
    Eigen::SelfAdjointEigenSolver<Mat<3>> km3(m3.Km), kf3(m3.Kf);
    CHECK(km3.eigenvalues().minCoeff() >= -1e-14);
    CHECK(km3.eigenvalues().maxCoeff() <= 1.0 + 1e-14);
    CHECK(kf3.eigenvalues().minCoeff() >= hp.kf_min - 1e-9);
    CHECK(kf3.eigenvalues().maxCoeff() <= hp.kf_max + 1e-9);
  }
}

namespace {

/// FD oracle over all design variables of one cell, both dimensions.
template <int Dim>
void check_partials(double rho, double eps,
                    const Eigen::Matrix<double, 1, Dim - 1>& alpha,
                    const MaterialHyperparams& hp) {
  const double h = 1e-6;
  auto d = tensor_partials<Dim>(rho, eps, alpha, hp);

  auto rel = [](double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
  };

  {
    auto p = cell_material<Dim>(rho + h, eps, alpha, hp);
    auto m = cell_material<Dim>(rho - h, eps, alpha, hp);
    Mat<Dim> fd_km = (p.Km - m.Km) / (2 * h);
    Mat<Dim> fd_kf = (p.Kf - m.Kf) / (2 * h);
    double fd_lam = (p.lambda - m.lambda) / (2 * h);
    CHECK((fd_km - d.dKm_drho).norm() < 1e-6);
    CHECK((fd_kf - d.dKf_drho).norm() / std::max(1.0, d.dKf_drho.norm()) < 1e-6);
    CHECK(rel(d.dlambda_drho, fd_lam) < 1e-6);
  }
  {
    auto p = cell_material<Dim>(rho, eps + h, alpha, hp);
    auto m = cell_material<Dim>(rho, eps - h, alpha, hp);
    CHECK(((p.Km - m.Km) / (2 * h) - d.dKm_deps).norm() < 1e-6);
    Mat<Dim> fd_kf = (p.Kf - m.Kf) / (2 * h);
    CHECK((fd_kf - d.dKf_deps).norm() / std::max(1.0, d.dKf_deps.norm()) < 1e-6);
    double fd_lam = (p.lambda - m.lambda) / (2 * h);
    CHECK(rel(d.dlambda_deps, fd_lam) < 1e-6);
  }
  for (int k = 0; k < Dim - 1; ++k) {
    auto ap = alpha, am = alpha;
    ap[k] += h;
    am[k] -= h;
    auto p = cell_material<Dim>(rho, eps, ap, hp);
    auto m = cell_material<Dim>(rho, eps, am, hp);
    CHECK(((p.Km - m.Km) / (2 * h) - d.dKm_dalpha[k]).norm() < 1e-6);
    Mat<Dim> fd_kf = (p.Kf - m.Kf) / (2 * h);
    CHECK((fd_kf - d.dKf_dalpha[k]).norm() / std::max(1.0, d.dKf_dalpha[k].norm()) <
          1e-6);
  }
}

}  // namespace

TEST_CASE("tensor partials match a finite-difference oracle") {
  MaterialHyperparams hp;
  check_partials<2>(0.5, 0.5, ang(0.3), hp);
  check_partials<3>(0.5, 0.5, ang(0.3, 0.9), hp);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> inner(0.05, 0.95);
  std::uniform_real_distribution<double> angle(-3.0, 3.0);
  for (int i = 0; i < 20; ++i) {
    check_partials<2>(inner(rng), inner(rng), ang(angle(rng)), hp);
    check_partials<3>(inner(rng), inner(rng), ang(angle(rng), angle(rng)), hp);
  }

  // the ablation variants carry consistent derivatives too
  MaterialHyperparams iso = hp;
  iso.km_isotropic = true;
  iso.kf_isotropic = true;
  check_partials<2>(0.4, 0.7, ang(-0.8), iso);
}

TEST_CASE("field-level tensor build validates its inputs") {
  MaterialHyperparams hp;
  auto theta = DesignField<2>::uniform(4, 0.5, 1.0);
  auto tensors = build_tensors(theta, hp);
  CHECK(tensors.size() == 4);

  theta.rho[2] = 1.5;
  CHECK_THROWS(build_tensors(theta, hp));
  theta.rho[2] = 0.5;
  theta.eps[1] = 2.0;
  CHECK_THROWS(build_tensors(theta, hp));

  MaterialHyperparams bad;
  bad.kf_max = bad.kf_min;  // empty range
  auto ok = DesignField<2>::uniform(4, 0.5, 1.0);
  CHECK_THROWS(build_tensors(ok, bad));
}
