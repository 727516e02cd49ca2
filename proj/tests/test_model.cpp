#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "pnps/model.hpp"

using namespace pnps;

namespace {

ModelParams single(double sigma = 1.0, double a = 1.0, double z = 0.0) {
  Eigen::VectorXd zv(1);
  zv << z;
  Eigen::MatrixXd av(1, 1);
  av << a;
  return ModelParams(sigma, zv, av);
}

ModelParams identity_pair(double sigma = 1.0, Eigen::Vector2d z = {0.0, 0.0}) {
  return ModelParams(sigma, z, Eigen::Matrix2d::Identity());
}

ModelParams sec5_params() {
  Eigen::Vector3d z(-5.0, 5.0, -5.0);
  Eigen::Matrix3d a;
  a << 2.5, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 0.5, 0.5;
  return ModelParams(1.0, z, a);
}

// Diagonally dominant symmetric matrix with nonnegative entries in [0, 3].
Eigen::MatrixXd random_steric(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> off(0.0, 0.75), diag(0.25, 0.75);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) a(i, j) = a(j, i) = off(rng);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) row += a(i, j);
    a(i, i) = row + diag(rng);
  }
  return a;
}

// Independent oracle: bisection for sigma log u + a u = v in one dimension.
double bisect_scalar(double sigma, double a, double v, double lo, double hi) {
  auto g = [&](double u) { return sigma * std::log(u) + a * u - v; };
  REQUIRE(g(lo) <= 0.0);
  REQUIRE(g(hi) >= 0.0);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("params validate the steric matrix") {
  CHECK_THROWS_AS(single(0.0), std::invalid_argument);   // sigma must be positive
  CHECK_THROWS_AS(single(-1.0), std::invalid_argument);
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;  // eigenvalues -1 and 3
  CHECK_THROWS_AS(ModelParams(1.0, Eigen::Vector2d(0, 0), bad), std::invalid_argument);
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, 0.1, 1.0;
  CHECK_THROWS_AS(ModelParams(1.0, Eigen::Vector2d(0, 0), asym), std::invalid_argument);
  Eigen::MatrixXd neg(2, 2);
  neg << 1.0, -0.1, -0.1, 1.0;
  CHECK_THROWS_AS(ModelParams(1.0, Eigen::Vector2d(0, 0), neg), std::invalid_argument);

  const ModelParams p = sec5_params();
  CHECK(p.alpha() > 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.a(), Eigen::EigenvaluesOnly);
  CHECK(p.alpha() == doctest::Approx(es.eigenvalues().minCoeff()).epsilon(1e-14));
  CHECK(p.max_a() == 2.5);
  CHECK(p.a() == p.a().transpose());
}

TEST_CASE("steric potential is the matrix action") {
  const ModelParams p = sec5_params();
  const Eigen::Vector3d u(1.0, 1.0, 1.0);
  const Eigen::VectorXd ps = steric_potential(p, u);
  CHECK(ps[0] == doctest::Approx(4.5).epsilon(1e-15));
  CHECK(ps[1] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(ps[2] == doctest::Approx(2.0).epsilon(1e-15));

  CHECK(steric_potential(p, Eigen::Vector3d::Zero()).isZero(0.0));

  const ModelParams id = identity_pair();
  const Eigen::VectorXd pid = steric_potential(id, Eigen::Vector2d(3.0, 7.0));
  CHECK(pid[0] == 3.0);
  CHECK(pid[1] == 7.0);

  CHECK_THROWS_AS(steric_potential(p, Eigen::Vector2d(1.0, 1.0)), std::invalid_argument);
}

TEST_CASE("chemical potential values") {
  Eigen::VectorXd one(1);
  one << 1.0;
  CHECK(chemical_potential(single(), one)[0] == doctest::Approx(1.0).epsilon(1e-15));

  const Eigen::VectorXd v2 = chemical_potential(identity_pair(), Eigen::Vector2d(1.0, 1.0));
  CHECK(v2[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(v2[1] == doctest::Approx(1.0).epsilon(1e-15));

  Eigen::VectorXd e(1);
  e << std::exp(1.0);
  CHECK(chemical_potential(single(2.0), e)[0] ==
        doctest::Approx(2.0 + std::exp(1.0)).epsilon(1e-15));

  Eigen::VectorXd zero(1);
  zero << 0.0;
  CHECK_THROWS_AS(chemical_potential(single(), zero), std::domain_error);
}

TEST_CASE("chemical potential jacobian") {
  Eigen::VectorXd one(1);
  one << 1.0;
  CHECK(chemical_potential_jacobian(single(), one)(0, 0) == doctest::Approx(2.0));

  const Eigen::MatrixXd j = chemical_potential_jacobian(identity_pair(), Eigen::Vector2d(1.0, 2.0));
  CHECK(j(0, 0) == doctest::Approx(2.0));
  CHECK(j(1, 1) == doctest::Approx(1.5));
  CHECK(j(0, 1) == 0.0);

  // positive definiteness at random positive points
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ld(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 4);
    const ModelParams p(1.0, Eigen::VectorXd::Zero(n), random_steric(rng, n));
    Eigen::VectorXd u(n);
    for (int i = 0; i < n; ++i) u[i] = std::exp(ld(rng));
    Eigen::LLT<Eigen::MatrixXd> llt(chemical_potential_jacobian(p, u));
    CHECK(llt.info() == Eigen::Success);
  }
  Eigen::VectorXd bad(1);
  bad << -1.0;
  CHECK_THROWS_AS(chemical_potential_jacobian(single(), bad), std::domain_error);
}

TEST_CASE("inversion solves F(u) = v") {
  const ModelParams p = single();  // F(u) = log u + u
  Eigen::VectorXd v(1);
  v << 1.0;
  CHECK(invert_chemical_potential(p, v)[0] == doctest::Approx(1.0).epsilon(1e-12));

  v << 0.0;
  const double root = invert_chemical_potential(p, v)[0];
  const double oracle = bisect_scalar(1.0, 1.0, 0.0, 0.1, 1.0);
  CHECK(root == doctest::Approx(oracle).epsilon(1e-11));
  CHECK(root == doctest::Approx(0.5671432904).epsilon(1e-9));

  const Eigen::VectorXd u2 =
      invert_chemical_potential(identity_pair(), Eigen::Vector2d(1.0, 1.0));
  CHECK(u2[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(u2[1] == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::VectorXd nan_v(1);
  nan_v << std::nan("");
  CHECK_THROWS_AS(invert_chemical_potential(p, nan_v), std::invalid_argument);
}

TEST_CASE("roundtrip over the documented parameter box") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> vd(-20.0, 20.0);
  const double sigmas[3] = {0.1, 1.0, 5.0};
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 4);
    const ModelParams p(sigmas[rng() % 3], Eigen::VectorXd::Zero(n), random_steric(rng, n));
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = vd(rng);
    const Eigen::VectorXd u = invert_chemical_potential(p, v);
    CHECK((u.array() > 0.0).all());
    worst = std::max(worst, (chemical_potential(p, u) - v).lpNorm<Eigen::Infinity>());
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("monotonicity of the chemical potential map") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> ld(-3.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 4);
    const ModelParams p(1.0, Eigen::VectorXd::Zero(n), random_steric(rng, n));
    Eigen::VectorXd u(n), v(n);
    for (int i = 0; i < n; ++i) {
      u[i] = std::exp(ld(rng));
      v[i] = std::exp(ld(rng));
    }
    if ((u - v).lpNorm<Eigen::Infinity>() == 0.0) continue;
    CHECK((u - v).dot(chemical_potential(p, u) - chemical_potential(p, v)) > 0.0);
  }
}

TEST_CASE("entropy variables and state roundtrip") {
  Eigen::VectorXd one(1);
  one << 1.0;
  const ModelParams charged(1.0, Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Ones(1, 1));
  CHECK(entropy_variables(charged, one, 0.5)[0] == doctest::Approx(1.5).epsilon(1e-15));

  // zero charge: entropy variables reduce to the chemical potential
  const ModelParams p = identity_pair();
  const Eigen::Vector2d u(0.7, 1.3);
  CHECK((entropy_variables(p, u, 2.0) - chemical_potential(p, u)).lpNorm<Eigen::Infinity>() ==
        0.0);

  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> ld(-2.0, 2.0), pd(-3.0, 3.0), zd(-3.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 4);
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = zd(rng);
    const ModelParams q(1.0, z, random_steric(rng, n));
    Eigen::VectorXd uu(n);
    for (int i = 0; i < n; ++i) uu[i] = std::exp(ld(rng));
    const double phi = pd(rng);
    const Eigen::VectorXd w = entropy_variables(q, uu, phi);
    const Eigen::VectorXd back = invert_chemical_potential(q, w - phi * q.z());
    worst = std::max(worst, (back - uu).lpNorm<Eigen::Infinity>());
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("field-level conversions agree with the pointwise ops") {
  const ModelParams p(1.0, Eigen::Vector2d(1.0, -1.0), Eigen::Matrix2d::Identity());
  Eigen::MatrixXd u(3, 2);
  u << 1.0, 2.0, 0.5, 0.25, 3.0, 1.0;
  Eigen::VectorXd phi(3);
  phi << 0.1, -0.2, 0.0;
  const Eigen::MatrixXd w = entropy_variables_field(p, u, phi);
  for (int k = 0; k < 3; ++k)
    CHECK((w.row(k).transpose() - entropy_variables(p, u.row(k).transpose(), phi[k]))
              .lpNorm<Eigen::Infinity>() == 0.0);
  const Eigen::MatrixXd back = concentrations_from_entropy(p, w, phi, {}, &u);
  CHECK((back - u).lpNorm<Eigen::Infinity>() <= 1e-12);
}
