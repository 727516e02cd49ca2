#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>

#include "pnps/errors.hpp"

namespace pnps {

struct NewtonSettings {
  double tol = 1e-12;     // residual tolerance (max norm)
  int max_iter = 100;
  int max_halvings = 40;  // line-search halvings per Newton step
  int dt_halvings = 3;    // time-step bisections before giving up
};

// Physical parameters: diffusion coefficient sigma, ionic charges z, and the
// steric interaction matrix a. The matrix is symmetrized on construction and
// must be positive definite; its smallest eigenvalue alpha is kept around for
// the decay-rate diagnostics.
class ModelParams {
 public:
  ModelParams(double sigma, Eigen::VectorXd charges, Eigen::MatrixXd steric)
      : sigma_(sigma), z_(std::move(charges)), a_(std::move(steric)) {
    const Eigen::Index n = z_.size();
    if (n < 1) throw std::invalid_argument("ModelParams: need at least one species");
    if (!(sigma_ > 0.0)) throw std::invalid_argument("ModelParams: sigma must be positive");
    if (a_.rows() != n || a_.cols() != n)
      throw std::invalid_argument("ModelParams: steric matrix must be n x n");
    if (!a_.allFinite() || !z_.allFinite())
      throw std::invalid_argument("ModelParams: parameters must be finite");
    if (a_.minCoeff() < 0.0)
      throw std::invalid_argument("ModelParams: steric entries must be nonnegative");
    const double scale = std::max(1.0, a_.cwiseAbs().maxCoeff());
    if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw std::invalid_argument("ModelParams: steric matrix must be symmetric");
    a_ = ((a_ + a_.transpose()) / 2.0).eval();  // exactly symmetric
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a_, Eigen::EigenvaluesOnly);
    alpha_ = es.eigenvalues().minCoeff();
    if (!(alpha_ > 0.0))
      throw std::invalid_argument("ModelParams: steric matrix must be positive definite");
  }

  int n_species() const { return static_cast<int>(z_.size()); }
  double sigma() const { return sigma_; }
  const Eigen::VectorXd& z() const { return z_; }
  const Eigen::MatrixXd& a() const { return a_; }
  double alpha() const { return alpha_; }
  double max_a() const { return a_.cwiseAbs().maxCoeff(); }

 private:
  double sigma_;
  Eigen::VectorXd z_;
  Eigen::MatrixXd a_;
  double alpha_;
};

inline void require_positive(const Eigen::VectorXd& u, const char* who) {
  if (!((u.array() > 0.0).all()))
    throw std::domain_error(std::string(who) + ": concentrations must be strictly positive");
}

/// Steric potential p_i(u) = sum_j a_ij u_j.
inline Eigen::VectorXd steric_potential(const ModelParams& p, const Eigen::VectorXd& u) {
  if (u.size() != p.n_species())
    throw std::invalid_argument("steric_potential: concentration size mismatch");
  return p.a() * u;
}

/// Chemical potential F_i(u) = sigma log u_i + p_i(u); strictly monotone on
/// the positive orthant, so it has a unique inverse.
inline Eigen::VectorXd chemical_potential(const ModelParams& p, const Eigen::VectorXd& u) {
  if (u.size() != p.n_species())
    throw std::invalid_argument("chemical_potential: concentration size mismatch");
  require_positive(u, "chemical_potential");
  return (p.sigma() * u.array().log()).matrix() + p.a() * u;
}

/// dF/du = sigma diag(1/u) + a; symmetric positive definite for u > 0.
inline Eigen::MatrixXd chemical_potential_jacobian(const ModelParams& p,
                                                   const Eigen::VectorXd& u) {
  if (u.size() != p.n_species())
    throw std::invalid_argument("chemical_potential_jacobian: concentration size mismatch");
  require_positive(u, "chemical_potential_jacobian");
  Eigen::MatrixXd jac = p.a();
  jac.diagonal() += (p.sigma() * u.cwiseInverse());
  return jac;
}

namespace detail {

// Scalar root of sigma log u + a u = v by bracketing bisection.
inline double scalar_chemical_root(const ModelParams& p, double v, double tol) {
  const double a = p.a()(0, 0);
  const double sigma = p.sigma();
  const auto g = [&](double u) { return sigma * std::log(u) + a * u - v; };
  double lo = 1.0, hi = 1.0;
  for (int guard = 0; g(lo) > 0.0; ++guard) {
    lo *= 0.5;
    if (guard > 2000 || lo <= 0.0) throw SolverError("scalar root: bracketing failed", g(lo), guard);
  }
  for (int guard = 0; g(hi) < 0.0; ++guard) {
    hi *= 2.0;
    if (guard > 2000 || !std::isfinite(hi)) throw SolverError("scalar root: bracketing failed", g(hi), guard);
  }
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 2000; ++it) {
    const double gm = g(mid);
    if (std::abs(gm) <= tol) return mid;
    (gm < 0.0 ? lo : hi) = mid;
    const double next = 0.5 * (lo + hi);
    if (next == mid) break;  // interval collapsed to adjacent doubles
    mid = next;
  }
  if (std::abs(g(mid)) <= tol) return mid;
  throw SolverError("scalar root: bisection stalled", std::abs(g(mid)), 2000);
}

}  // namespace detail

/// Inverts the chemical potential: returns the unique u > 0 with F(u) = v.
/// Newton runs in s = log u so positivity is unconditional; steps are damped
/// by a residual-decrease line search. For a single species a bisection
/// fallback guarantees termination.
inline Eigen::VectorXd invert_chemical_potential(const ModelParams& p, const Eigen::VectorXd& v,
                                                 const NewtonSettings& settings = {},
                                                 const Eigen::VectorXd* guess = nullptr) {
  const int n = p.n_species();
  if (v.size() != n) throw std::invalid_argument("invert_chemical_potential: size mismatch");
  if (!v.allFinite()) throw std::invalid_argument("invert_chemical_potential: nonfinite input");

  const auto residual = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return (p.sigma() * u.array().log()).matrix() + p.a() * u - v;
  };

  double best_res = std::numeric_limits<double>::infinity();
  const auto newton = [&](Eigen::VectorXd u) -> std::optional<Eigen::VectorXd> {
    Eigen::VectorXd r = residual(u);
    double rnorm = r.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < settings.max_iter; ++it) {
      best_res = std::min(best_res, rnorm);
      if (rnorm <= settings.tol) return u;
      Eigen::LLT<Eigen::MatrixXd> llt(chemical_potential_jacobian(p, u));
      if (llt.info() != Eigen::Success) return std::nullopt;
      const Eigen::VectorXd du = llt.solve(-r);
      const Eigen::VectorXd ds = du.cwiseQuotient(u);
      double step = 1.0;
      bool accepted = false;
      for (int h = 0; h <= settings.max_halvings; ++h) {
        const Eigen::VectorXd trial = (u.array() * (step * ds.array()).exp()).matrix();
        if (trial.allFinite() && (trial.array() > 0.0).all()) {
          const Eigen::VectorXd rt = residual(trial);
          const double rtnorm = rt.lpNorm<Eigen::Infinity>();
          if (std::isfinite(rtnorm) && rtnorm < rnorm) {
            u = trial;
            r = rt;
            rnorm = rtnorm;
            accepted = true;
            break;
          }
        }
        step *= 0.5;
      }
      if (!accepted) return std::nullopt;
    }
    best_res = std::min(best_res, rnorm);
    if (rnorm <= settings.tol) return u;
    return std::nullopt;
  };

  Eigen::VectorXd u0;
  if (guess && guess->size() == n && (guess->array() > 0.0).all() && guess->allFinite()) {
    u0 = *guess;
  } else {
    const Eigen::VectorXd p_ones = p.a() * Eigen::VectorXd::Ones(n);
    u0 = ((v - p_ones) / p.sigma()).array().exp().min(1e12).max(1e-12).matrix();
  }

  if (auto root = newton(u0)) return *root;
  if (auto root = newton(Eigen::VectorXd::Ones(n))) return *root;
  if (n == 1) {
    Eigen::VectorXd u(1);
    u[0] = detail::scalar_chemical_root(p, v[0], settings.tol);
    return u;
  }
  throw SolverError("invert_chemical_potential: Newton did not converge", best_res,
                    settings.max_iter);
}

/// Entropy variables w = F(u) + z phi (electro-chemical potential).
inline Eigen::VectorXd entropy_variables(const ModelParams& p, const Eigen::VectorXd& u,
                                         double phi) {
  return chemical_potential(p, u) + phi * p.z();
}

/// Per-cell entropy variables; rows index cells, columns species.
inline Eigen::MatrixXd entropy_variables_field(const ModelParams& p, const Eigen::MatrixXd& u,
                                               const Eigen::VectorXd& phi) {
  if (u.rows() != phi.size() || u.cols() != p.n_species())
    throw std::invalid_argument("entropy_variables_field: size mismatch");
  Eigen::MatrixXd w(u.rows(), u.cols());
  for (Eigen::Index k = 0; k < u.rows(); ++k)
    w.row(k) = entropy_variables(p, u.row(k).transpose(), phi[k]).transpose();
  return w;
}

/// Per-cell recovery u = F^{-1}(w - z phi). An optional previous iterate warm
/// starts the cellwise Newton solves.
inline Eigen::MatrixXd concentrations_from_entropy(const ModelParams& p, const Eigen::MatrixXd& w,
                                                   const Eigen::VectorXd& phi,
                                                   const NewtonSettings& settings = {},
                                                   const Eigen::MatrixXd* guess = nullptr) {
  if (w.rows() != phi.size() || w.cols() != p.n_species())
    throw std::invalid_argument("concentrations_from_entropy: size mismatch");
  Eigen::MatrixXd u(w.rows(), w.cols());
  Eigen::VectorXd g;
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    const Eigen::VectorXd v = w.row(k).transpose() - phi[k] * p.z();
    const Eigen::VectorXd* gp = nullptr;
    if (guess && guess->rows() == w.rows()) {
      g = guess->row(k).transpose();
      gp = &g;
    }
    u.row(k) = invert_chemical_potential(p, v, settings, gp).transpose();
  }
  return u;
}

}  // namespace pnps
