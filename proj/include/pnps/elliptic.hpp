#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <cmath>
#include <vector>

#include "pnps/errors.hpp"
#include "pnps/grid.hpp"
#include "pnps/model.hpp"

namespace pnps {

// Integrated-form discrete -Laplace over cells: row K collects
// sum_{faces of K} T_f (phi_K - phi_L). Dirichlet faces are folded into the
// diagonal; their trace terms are supplied separately through trace_rhs.
struct LaplaceOperator {
  Eigen::SparseMatrix<double> matrix;
  std::vector<BoundaryFace> boundary_faces;
  double cell_volume = 0.0;
  bool pure_neumann = true;

  Eigen::Index cells() const { return matrix.rows(); }

  Eigen::VectorXd trace_rhs(const Eigen::VectorXd& traces) const {
    if (traces.size() != static_cast<Eigen::Index>(boundary_faces.size()))
      throw std::invalid_argument("trace_rhs: trace vector size mismatch");
    Eigen::VectorXd r = Eigen::VectorXd::Zero(matrix.rows());
    for (std::size_t i = 0; i < boundary_faces.size(); ++i) {
      const auto& f = boundary_faces[i];
      if (f.bc == BoundaryCondition::dirichlet)
        r[f.cell] += f.transmissibility * traces[static_cast<Eigen::Index>(i)];
    }
    return r;
  }
};

inline LaplaceOperator assemble_laplacian(const Grid& g) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(4 * g.interior_faces.size() + g.boundary_faces.size());
  for (const auto& f : g.interior_faces) {
    trip.emplace_back(f.cell_a, f.cell_a, f.transmissibility);
    trip.emplace_back(f.cell_b, f.cell_b, f.transmissibility);
    trip.emplace_back(f.cell_a, f.cell_b, -f.transmissibility);
    trip.emplace_back(f.cell_b, f.cell_a, -f.transmissibility);
  }
  LaplaceOperator op;
  for (const auto& f : g.boundary_faces) {
    if (f.bc == BoundaryCondition::dirichlet) {
      trip.emplace_back(f.cell, f.cell, f.transmissibility);
      op.pure_neumann = false;
    }
  }
  op.matrix.resize(g.n_cells(), g.n_cells());
  op.matrix.setFromTriplets(trip.begin(), trip.end());
  op.matrix.makeCompressed();
  op.boundary_faces = g.boundary_faces;
  op.cell_volume = g.cell_volume;
  return op;
}

/// Interior-faces-only Laplacian (no-flux boundaries); used for the optional
/// H1 regularization of the species equations.
inline Eigen::SparseMatrix<double> assemble_neumann_laplacian(const Grid& g) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(4 * g.interior_faces.size());
  for (const auto& f : g.interior_faces) {
    trip.emplace_back(f.cell_a, f.cell_a, f.transmissibility);
    trip.emplace_back(f.cell_b, f.cell_b, f.transmissibility);
    trip.emplace_back(f.cell_a, f.cell_b, -f.transmissibility);
    trip.emplace_back(f.cell_b, f.cell_a, -f.transmissibility);
  }
  Eigen::SparseMatrix<double> m(g.n_cells(), g.n_cells());
  m.setFromTriplets(trip.begin(), trip.end());
  m.makeCompressed();
  return m;
}

namespace detail {

inline Eigen::VectorXd solve_spd(const Eigen::SparseMatrix<double>& m,
                                 const Eigen::VectorXd& rhs) {
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(m);
  if (ldlt.info() != Eigen::Success)
    throw SolverError("sparse factorization failed", std::nan(""), 0);
  return ldlt.solve(rhs);
}

// Consistent singular Neumann system solved through a bordered formulation
// with the zero-mean constraint; the multiplier vanishes for compatible data.
inline Eigen::VectorXd solve_neumann(const Eigen::SparseMatrix<double>& m,
                                     const Eigen::VectorXd& rhs) {
  const Eigen::Index n = m.rows();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(m.nonZeros()) + 2 * static_cast<std::size_t>(n));
  for (int k = 0; k < m.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it)
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (Eigen::Index i = 0; i < n; ++i) {
    trip.emplace_back(static_cast<int>(i), static_cast<int>(n), 1.0);
    trip.emplace_back(static_cast<int>(n), static_cast<int>(i), 1.0);
  }
  Eigen::SparseMatrix<double> b(n + 1, n + 1);
  b.setFromTriplets(trip.begin(), trip.end());
  b.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(b);
  if (lu.info() != Eigen::Success)
    throw SolverError("bordered Neumann factorization failed", std::nan(""), 0);
  Eigen::VectorXd rhs1(n + 1);
  rhs1 << rhs, 0.0;
  const Eigen::VectorXd x = lu.solve(rhs1);
  Eigen::VectorXd phi = x.head(n);
  phi.array() -= phi.mean();
  return phi;
}

inline void check_linear_residual(const Eigen::SparseMatrix<double>& m, const Eigen::VectorXd& phi,
                                  const Eigen::VectorXd& rhs) {
  const double r = (m * phi - rhs).lpNorm<Eigen::Infinity>();
  const double bound = 1e-11 * (1.0 + rhs.lpNorm<Eigen::Infinity>());
  if (!(r <= bound)) throw SolverError("linear Poisson solve residual too large", r, 1);
}

}  // namespace detail

inline CellField total_charge(const ModelParams& p, const Eigen::MatrixXd& u) {
  if (u.cols() != p.n_species()) throw std::invalid_argument("total_charge: species mismatch");
  return u * p.z();
}

/// Solves L phi = vol*charge + trace terms. Pure Neumann problems require
/// compatible (zero-mean) charge and return the zero-mean solution.
inline CellField solve_poisson_linear(const LaplaceOperator& op, const CellField& charge,
                                      const Eigen::VectorXd& traces) {
  if (charge.size() != op.cells())
    throw std::invalid_argument("solve_poisson_linear: charge field size mismatch");
  const double vol = op.cell_volume;
  Eigen::VectorXd rhs = vol * charge + op.trace_rhs(traces);
  if (op.pure_neumann) {
    const double total = vol * charge.sum();
    if (!(std::abs(total) <= 1e-10 * (1.0 + vol * charge.cwiseAbs().sum())))
      throw CompatibilityError(
          "solve_poisson_linear: net charge incompatible with pure Neumann boundaries");
    rhs.array() -= rhs.mean();
    const CellField phi = detail::solve_neumann(op.matrix, rhs);
    detail::check_linear_residual(op.matrix, phi, rhs);
    return phi;
  }
  const CellField phi = detail::solve_spd(op.matrix, rhs);
  detail::check_linear_residual(op.matrix, phi, rhs);
  return phi;
}

/// Discrete harmonic field matching the Dirichlet traces; the zero field under
/// pure Neumann conditions.
inline CellField harmonic_extension(const LaplaceOperator& op, const Eigen::VectorXd& traces) {
  if (op.pure_neumann) return CellField::Zero(op.cells());
  return solve_poisson_linear(op, CellField::Zero(op.cells()), traces);
}

/// Solves the semilinear Poisson problem L phi = vol * sum_i z_i u_i(w, phi)
/// + trace terms by Newton iteration. The cellwise charge is decreasing in
/// phi, so the Jacobian is the operator plus a nonnegative diagonal.
inline CellField solve_poisson_semilinear(const ModelParams& p, const LaplaceOperator& op,
                                          const Eigen::MatrixXd& w, const Eigen::VectorXd& traces,
                                          const NewtonSettings& settings = {},
                                          const CellField* initial = nullptr) {
  const Eigen::Index cells = op.cells();
  if (w.rows() != cells || w.cols() != p.n_species())
    throw std::invalid_argument("solve_poisson_semilinear: entropy field size mismatch");
  const double vol = op.cell_volume;

  if (p.z().isZero(0.0)) {
    // Charge independent of phi; the problem is linear.
    const Eigen::MatrixXd u =
        concentrations_from_entropy(p, w, CellField::Zero(cells), settings);
    return solve_poisson_linear(op, total_charge(p, u), traces);
  }

  const Eigen::VectorXd trhs = op.trace_rhs(traces);
  CellField phi = initial ? *initial : CellField::Zero(cells);
  Eigen::MatrixXd u = concentrations_from_entropy(p, w, phi, settings);

  const auto residual = [&](const CellField& ph, const Eigen::MatrixXd& uu) -> Eigen::VectorXd {
    return op.matrix * ph - vol * total_charge(p, uu) - trhs;
  };

  Eigen::VectorXd r = residual(phi, u);
  double rnorm = r.lpNorm<Eigen::Infinity>();
  const double thresh =
      settings.tol * (1.0 + (vol * total_charge(p, u)).lpNorm<Eigen::Infinity>() +
                      trhs.lpNorm<Eigen::Infinity>());

  const auto newton_step = [&](bool line_search) -> bool {
    // Jacobian: L + vol * diag(z^T F'(u_K)^{-1} z).
    Eigen::SparseMatrix<double> jac = op.matrix;
    Eigen::VectorXd diag(cells);
    for (Eigen::Index k = 0; k < cells; ++k) {
      Eigen::LLT<Eigen::MatrixXd> llt(chemical_potential_jacobian(p, u.row(k).transpose()));
      diag[k] = vol * p.z().dot(llt.solve(p.z()));
    }
    Eigen::SparseMatrix<double> d(cells, cells);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(cells));
    for (Eigen::Index k = 0; k < cells; ++k)
      trip.emplace_back(static_cast<int>(k), static_cast<int>(k), diag[k]);
    d.setFromTriplets(trip.begin(), trip.end());
    jac += d;
    const Eigen::VectorXd delta = detail::solve_spd(jac, -r);
    double step = 1.0;
    for (int h = 0; h <= settings.max_halvings; ++h) {
      const CellField trial = phi + step * delta;
      try {
        const Eigen::MatrixXd ut = concentrations_from_entropy(p, w, trial, settings, &u);
        const Eigen::VectorXd rt = residual(trial, ut);
        const double rtnorm = rt.lpNorm<Eigen::Infinity>();
        if (std::isfinite(rtnorm) && rtnorm < rnorm) {
          phi = trial;
          u = ut;
          r = rt;
          rnorm = rtnorm;
          return true;
        }
      } catch (const SolverError&) {
        // reject the trial step
      }
      if (!line_search) return false;
      step *= 0.5;
    }
    return false;
  };

  int it = 0;
  for (; it < settings.max_iter && rnorm > thresh; ++it) {
    if (!newton_step(true))
      throw SolverError("solve_poisson_semilinear: line search stalled", rnorm, it);
  }
  if (rnorm > thresh)
    throw SolverError("solve_poisson_semilinear: Newton did not converge", rnorm, it);
  // Polishing steps push the residual toward the floating-point floor.
  for (int extra = 0; extra < 2 && rnorm > 0.0; ++extra)
    if (!newton_step(false)) break;
  return phi;
}

}  // namespace pnps
