#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "pnps/diagnostics.hpp"
#include "pnps/elliptic.hpp"
#include "pnps/errors.hpp"
#include "pnps/grid.hpp"
#include "pnps/model.hpp"
#include "pnps/types.hpp"

namespace pnps {

/// Builds the initial state: the potential solves the linear Poisson problem
/// with the charge of u0, and the entropy variables follow from it. Pure
/// Neumann configurations must carry zero total charge.
inline State initialize(const ModelParams& p, const Grid& g, const Eigen::MatrixXd& u0) {
  if (u0.rows() != g.n_cells() || u0.cols() != p.n_species())
    throw std::invalid_argument("initialize: initial data size mismatch");
  if (!(u0.minCoeff() > 0.0) || !u0.allFinite())
    throw std::domain_error("initialize: initial concentrations must be strictly positive");
  const LaplaceOperator op = assemble_laplacian(g);
  const CellField charge = total_charge(p, u0);
  if (op.pure_neumann) {
    const double total = cell_integral(g, charge);
    const double scale = 1.0 + g.cell_volume * charge.cwiseAbs().sum();
    if (!(std::abs(total) <= 1e-10 * scale))
      throw CompatibilityError("initialize: nonzero total charge with pure Neumann boundaries");
  }
  State s;
  s.u = u0;
  s.phi = solve_poisson_linear(op, charge, g.dirichlet_traces());
  s.w = entropy_variables_field(p, u0, s.phi);
  s.time = 0.0;
  s.step = 0;
  return s;
}

// Residual of one implicit Euler step at trial fields (w, phi):
// species block, per cell K and species i,
//   vol (u_i(w,phi) - u_prev,i)/dt + sum_faces T m (w_iK - w_iL)
//   + eps (L_N w_i + vol w_i),
// with no species flux through the boundary, plus the Poisson block
//   L phi - vol sum_i z_i u_i(w,phi) - trace terms.
struct StepResidual {
  Eigen::MatrixXd species;  // cells x species
  CellField poisson;
  Eigen::MatrixXd u;  // concentrations recovered from (w, phi)
};

namespace detail {

inline Eigen::MatrixXd species_residual(const ModelParams& p, const Grid& g,
                                        const Eigen::MatrixXd& u_prev, const Eigen::MatrixXd& u,
                                        const Eigen::MatrixXd& w,
                                        const Eigen::SparseMatrix<double>* reg, double dt,
                                        double eps, MobilityMean mobility) {
  const double vol = g.cell_volume;
  Eigen::MatrixXd r = (vol / dt) * (u - u_prev);
  for (const auto& f : g.interior_faces)
    for (int i = 0; i < p.n_species(); ++i) {
      const double m = mobility_mean(u(f.cell_a, i), u(f.cell_b, i), w(f.cell_a, i),
                                     w(f.cell_b, i), mobility);
      const double flux = f.transmissibility * m * (w(f.cell_a, i) - w(f.cell_b, i));
      r(f.cell_a, i) += flux;
      r(f.cell_b, i) -= flux;
    }
  if (eps > 0.0 && reg) r += eps * ((*reg) * w + vol * w);
  return r;
}

}  // namespace detail

inline StepResidual step_residual(const ModelParams& p, const Grid& g, const LaplaceOperator& op,
                                  const State& prev, const Eigen::MatrixXd& w,
                                  const CellField& phi, const RunConfig& config) {
  if (w.rows() != g.n_cells() || w.cols() != p.n_species() || phi.size() != g.n_cells())
    throw std::invalid_argument("step_residual: trial field size mismatch");
  StepResidual out;
  out.u = concentrations_from_entropy(p, w, phi, config.newton, &prev.u);
  std::optional<Eigen::SparseMatrix<double>> reg;
  if (config.epsilon > 0.0) reg = assemble_neumann_laplacian(g);
  out.species = detail::species_residual(p, g, prev.u, out.u, w, reg ? &*reg : nullptr,
                                         config.dt, config.epsilon, config.mobility);
  out.poisson = op.matrix * phi - g.cell_volume * total_charge(p, out.u) -
                op.trace_rhs(g.dirichlet_traces());
  return out;
}

namespace detail {

// Shared assembly context for one time step at step size dt.
struct StepWork {
  const ModelParams& p;
  const Grid& g;
  const LaplaceOperator& op;
  const RunConfig& config;
  const Eigen::MatrixXd& u_prev;
  double dt;
  Eigen::VectorXd traces;
  Eigen::VectorXd trhs;
  const Eigen::SparseMatrix<double>* reg;  // nullptr when eps == 0

  int n() const { return p.n_species(); }
  int cells() const { return g.n_cells(); }
  int sidx(int species, int cell) const { return species * cells() + cell; }

  Eigen::MatrixXd recover(const Eigen::MatrixXd& w, const CellField& phi,
                          const Eigen::MatrixXd& warm) const {
    return concentrations_from_entropy(p, w, phi, config.newton, &warm);
  }
  Eigen::MatrixXd residual_species(const Eigen::MatrixXd& u, const Eigen::MatrixXd& w) const {
    return species_residual(p, g, u_prev, u, w, reg, dt, config.epsilon, config.mobility);
  }
  Eigen::VectorXd residual_poisson(const CellField& phi, const Eigen::MatrixXd& u) const {
    return op.matrix * phi - g.cell_volume * total_charge(p, u) - trhs;
  }
};

// Inverse of the chemical-potential Jacobian per cell.
inline std::vector<Eigen::MatrixXd> potential_jacobian_inverses(const ModelParams& p,
                                                                const Eigen::MatrixXd& u) {
  std::vector<Eigen::MatrixXd> inv(static_cast<std::size_t>(u.rows()));
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(p.n_species(), p.n_species());
  for (Eigen::Index k = 0; k < u.rows(); ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(chemical_potential_jacobian(p, u.row(k).transpose()));
    if (llt.info() != Eigen::Success)
      throw SolverError("species Jacobian factorization failed", std::nan(""), 0);
    inv[static_cast<std::size_t>(k)] = llt.solve(eye);
  }
  return inv;
}

// Newton solve of the species block at frozen potential. Updates w and u in
// place; returns the final residual max norm.
inline double solve_species_block(const StepWork& ctx, Eigen::MatrixXd& w, const CellField& phi,
                                  Eigen::MatrixXd& u, double thresh) {
  const auto& cfg = ctx.config.newton;
  const int n = ctx.n();
  const int cells = ctx.cells();
  const double vol = ctx.g.cell_volume;
  const bool arithmetic = ctx.config.mobility == MobilityMean::arithmetic;

  Eigen::MatrixXd r = ctx.residual_species(u, w);
  double rnorm = r.lpNorm<Eigen::Infinity>();

  const auto try_step = [&](bool line_search) -> bool {
    const std::vector<Eigen::MatrixXd> binv = potential_jacobian_inverses(ctx.p, u);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(cells) * n * n +
                 ctx.g.interior_faces.size() * (4 + 4 * static_cast<std::size_t>(n)));
    const double scale_t = vol / ctx.dt;
    for (int k = 0; k < cells; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          trip.emplace_back(ctx.sidx(i, k), ctx.sidx(j, k),
                            scale_t * binv[static_cast<std::size_t>(k)](i, j));
    for (const auto& f : ctx.g.interior_faces) {
      const int a = f.cell_a, b = f.cell_b;
      for (int i = 0; i < n; ++i) {
        const double wd = w(a, i) - w(b, i);
        const double m =
            mobility_mean(u(a, i), u(b, i), w(a, i), w(b, i), ctx.config.mobility);
        const double tm = f.transmissibility * m;
        trip.emplace_back(ctx.sidx(i, a), ctx.sidx(i, a), tm);
        trip.emplace_back(ctx.sidx(i, a), ctx.sidx(i, b), -tm);
        trip.emplace_back(ctx.sidx(i, b), ctx.sidx(i, b), tm);
        trip.emplace_back(ctx.sidx(i, b), ctx.sidx(i, a), -tm);
        const double c = f.transmissibility * wd;
        if (arithmetic) {
          for (int j = 0; j < n; ++j) {
            const double ca = 0.5 * c * binv[static_cast<std::size_t>(a)](i, j);
            const double cb = 0.5 * c * binv[static_cast<std::size_t>(b)](i, j);
            trip.emplace_back(ctx.sidx(i, a), ctx.sidx(j, a), ca);
            trip.emplace_back(ctx.sidx(i, a), ctx.sidx(j, b), cb);
            trip.emplace_back(ctx.sidx(i, b), ctx.sidx(j, a), -ca);
            trip.emplace_back(ctx.sidx(i, b), ctx.sidx(j, b), -cb);
          }
        } else {
          const int up = w(a, i) >= w(b, i) ? a : b;
          for (int j = 0; j < n; ++j) {
            const double cu = c * binv[static_cast<std::size_t>(up)](i, j);
            trip.emplace_back(ctx.sidx(i, a), ctx.sidx(j, up), cu);
            trip.emplace_back(ctx.sidx(i, b), ctx.sidx(j, up), -cu);
          }
        }
      }
    }
    if (ctx.config.epsilon > 0.0 && ctx.reg) {
      const double eps = ctx.config.epsilon;
      for (int i = 0; i < n; ++i) {
        for (int col = 0; col < ctx.reg->outerSize(); ++col)
          for (Eigen::SparseMatrix<double>::InnerIterator it(*ctx.reg, col); it; ++it)
            trip.emplace_back(ctx.sidx(i, static_cast<int>(it.row())),
                              ctx.sidx(i, static_cast<int>(it.col())), eps * it.value());
        for (int k = 0; k < cells; ++k)
          trip.emplace_back(ctx.sidx(i, k), ctx.sidx(i, k), eps * vol);
      }
    }
    Eigen::SparseMatrix<double> jac(n * cells, n * cells);
    jac.setFromTriplets(trip.begin(), trip.end());
    jac.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(jac);
    if (lu.info() != Eigen::Success)
      throw SolverError("species block factorization failed", rnorm, 0);
    Eigen::VectorXd rhs(n * cells);
    for (int i = 0; i < n; ++i) rhs.segment(i * cells, cells) = -r.col(i);
    const Eigen::VectorXd delta = lu.solve(rhs);

    double step = 1.0;
    for (int h = 0; h <= cfg.max_halvings; ++h) {
      Eigen::MatrixXd wt = w;
      for (int i = 0; i < n; ++i) wt.col(i) += step * delta.segment(i * cells, cells);
      try {
        const Eigen::MatrixXd ut = ctx.recover(wt, phi, u);
        const Eigen::MatrixXd rt = ctx.residual_species(ut, wt);
        const double rtnorm = rt.lpNorm<Eigen::Infinity>();
        if (std::isfinite(rtnorm) && rtnorm < rnorm) {
          w = wt;
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
  for (; it < cfg.max_iter && rnorm > thresh; ++it)
    if (!try_step(true)) throw SolverError("species block line search stalled", rnorm, it);
  if (rnorm > thresh)
    throw SolverError("species block Newton did not converge", rnorm, it);
  for (int extra = 0; extra < 2 && rnorm > 0.0; ++extra)
    if (!try_step(false)) break;
  return rnorm;
}

// Fully coupled Newton on (w, phi). Pure-Neumann steps without regularization
// carry the exact gauge direction (w_i += z_i c, phi += c); the system is then
// solved in bordered form against that direction. With all charges zero the
// potential decouples and that same direction stays in the null space even
// under regularization.
inline void solve_coupled(const StepWork& ctx, Eigen::MatrixXd& w, CellField& phi,
                          Eigen::MatrixXd& u, double thresh_sp, double thresh_phi) {
  const auto& cfg = ctx.config.newton;
  const int n = ctx.n();
  const int cells = ctx.cells();
  const double vol = ctx.g.cell_volume;
  const bool arithmetic = ctx.config.mobility == MobilityMean::arithmetic;
  const bool gauged =
      ctx.op.pure_neumann && (!(ctx.config.epsilon > 0.0) || ctx.p.z().isZero(0.0));
  const int nw = n * cells;
  const int size = nw + cells + (gauged ? 1 : 0);
  const int pidx = nw;  // phi block offset

  Eigen::MatrixXd r_sp = Eigen::MatrixXd::Zero(cells, n);
  Eigen::VectorXd r_phi = Eigen::VectorXd::Zero(cells);
  const auto refresh = [&]() {
    r_sp = ctx.residual_species(u, w);
    r_phi = ctx.residual_poisson(phi, u);
  };
  refresh();
  const auto norms = [&]() {
    return std::pair<double, double>{r_sp.lpNorm<Eigen::Infinity>(),
                                     r_phi.lpNorm<Eigen::Infinity>()};
  };

  auto [rs, rp] = norms();
  const auto merit = [&](double a, double b) { return std::max(a / thresh_sp, b / thresh_phi); };
  double m0 = merit(rs, rp);

  const auto try_step = [&](bool line_search) -> bool {
    const std::vector<Eigen::MatrixXd> binv = potential_jacobian_inverses(ctx.p, u);
    std::vector<Eigen::Triplet<double>> trip;
    const double scale_t = vol / ctx.dt;
    const Eigen::VectorXd& z = ctx.p.z();
    // time-derivative block and cross couplings per cell
    for (int k = 0; k < cells; ++k) {
      const Eigen::MatrixXd& b = binv[static_cast<std::size_t>(k)];
      const Eigen::VectorXd bz = b * z;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
          trip.emplace_back(ctx.sidx(i, k), ctx.sidx(j, k), scale_t * b(i, j));
        trip.emplace_back(ctx.sidx(i, k), pidx + k, -scale_t * bz[i]);
        trip.emplace_back(pidx + k, ctx.sidx(i, k), -vol * bz[i]);  // z^T B column j = (Bz)_j
      }
      trip.emplace_back(pidx + k, pidx + k, vol * z.dot(bz));
    }
    // species fluxes
    for (const auto& f : ctx.g.interior_faces) {
      const int a = f.cell_a, b = f.cell_b;
      for (int i = 0; i < n; ++i) {
        const double wd = w(a, i) - w(b, i);
        const double m =
            mobility_mean(u(a, i), u(b, i), w(a, i), w(b, i), ctx.config.mobility);
        const double tm = f.transmissibility * m;
        trip.emplace_back(ctx.sidx(i, a), ctx.sidx(i, a), tm);
        trip.emplace_back(ctx.sidx(i, a), ctx.sidx(i, b), -tm);
        trip.emplace_back(ctx.sidx(i, b), ctx.sidx(i, b), tm);
        trip.emplace_back(ctx.sidx(i, b), ctx.sidx(i, a), -tm);
        const double c = f.transmissibility * wd;
        const auto mobility_sensitivity = [&](int cell, double weight) {
          const Eigen::MatrixXd& bc = binv[static_cast<std::size_t>(cell)];
          for (int j = 0; j < n; ++j) {
            const double cj = weight * c * bc(i, j);
            trip.emplace_back(ctx.sidx(i, a), ctx.sidx(j, cell), cj);
            trip.emplace_back(ctx.sidx(i, b), ctx.sidx(j, cell), -cj);
          }
          const double cphi = -weight * c * (bc.row(i) * z)(0);
          trip.emplace_back(ctx.sidx(i, a), pidx + cell, cphi);
          trip.emplace_back(ctx.sidx(i, b), pidx + cell, -cphi);
        };
        if (arithmetic) {
          mobility_sensitivity(a, 0.5);
          mobility_sensitivity(b, 0.5);
        } else {
          mobility_sensitivity(w(a, i) >= w(b, i) ? a : b, 1.0);
        }
      }
    }
    // regularization
    if (ctx.config.epsilon > 0.0 && ctx.reg) {
      const double eps = ctx.config.epsilon;
      for (int i = 0; i < n; ++i) {
        for (int col = 0; col < ctx.reg->outerSize(); ++col)
          for (Eigen::SparseMatrix<double>::InnerIterator it(*ctx.reg, col); it; ++it)
            trip.emplace_back(ctx.sidx(i, static_cast<int>(it.row())),
                              ctx.sidx(i, static_cast<int>(it.col())), eps * it.value());
        for (int k = 0; k < cells; ++k)
          trip.emplace_back(ctx.sidx(i, k), ctx.sidx(i, k), eps * vol);
      }
    }
    // Poisson stiffness
    for (int col = 0; col < ctx.op.matrix.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(ctx.op.matrix, col); it; ++it)
        trip.emplace_back(pidx + static_cast<int>(it.row()), pidx + static_cast<int>(it.col()),
                          it.value());
    if (gauged) {
      // border with the gauge tangent (z_i, 1) and the zero-mean constraint
      for (int k = 0; k < cells; ++k) {
        for (int i = 0; i < n; ++i) {
          trip.emplace_back(ctx.sidx(i, k), size - 1, z[i]);
          trip.emplace_back(size - 1, ctx.sidx(i, k), z[i]);
        }
        trip.emplace_back(pidx + k, size - 1, 1.0);
        trip.emplace_back(size - 1, pidx + k, 1.0);
      }
    }
    Eigen::SparseMatrix<double> jac(size, size);
    jac.setFromTriplets(trip.begin(), trip.end());
    jac.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(jac);
    if (lu.info() != Eigen::Success)
      throw SolverError("coupled Newton factorization failed", m0, 0);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(size);
    for (int i = 0; i < n; ++i) rhs.segment(i * cells, cells) = -r_sp.col(i);
    rhs.segment(pidx, cells) = -r_phi;
    const Eigen::VectorXd delta = lu.solve(rhs);

    double step = 1.0;
    for (int h = 0; h <= cfg.max_halvings; ++h) {
      Eigen::MatrixXd wt = w;
      for (int i = 0; i < n; ++i) wt.col(i) += step * delta.segment(i * cells, cells);
      const CellField phit = phi + step * delta.segment(pidx, cells);
      try {
        const Eigen::MatrixXd ut = ctx.recover(wt, phit, u);
        const Eigen::MatrixXd rst = species_residual(ctx.p, ctx.g, ctx.u_prev, ut, wt, ctx.reg,
                                                     ctx.dt, ctx.config.epsilon,
                                                     ctx.config.mobility);
        const Eigen::VectorXd rpt = ctx.residual_poisson(phit, ut);
        const double mt = merit(rst.lpNorm<Eigen::Infinity>(), rpt.lpNorm<Eigen::Infinity>());
        if (std::isfinite(mt) && mt < m0) {
          w = wt;
          phi = phit;
          u = ut;
          r_sp = rst;
          r_phi = rpt;
          m0 = mt;
          return true;
        }
      } catch (const SolverError&) {
      }
      if (!line_search) return false;
      step *= 0.5;
    }
    return false;
  };

  int it = 0;
  for (; it < cfg.max_iter && m0 > 1.0; ++it)
    if (!try_step(true)) throw SolverError("coupled Newton line search stalled", m0, it);
  if (m0 > 1.0) throw SolverError("coupled Newton did not converge", m0, it);
  for (int extra = 0; extra < 2 && m0 > 0.0; ++extra)
    if (!try_step(false)) break;
}

inline State single_step(const ModelParams& p, const Grid& g, const LaplaceOperator& op,
                         const State& prev, const RunConfig& config, double dt) {
  std::optional<Eigen::SparseMatrix<double>> reg;
  if (config.epsilon > 0.0) reg = assemble_neumann_laplacian(g);
  StepWork ctx{p,  g,  op, config, prev.u, dt, g.dirichlet_traces(),
               Eigen::VectorXd(), reg ? &*reg : nullptr};
  ctx.trhs = op.trace_rhs(ctx.traces);

  const double vol = g.cell_volume;
  const double thresh_sp =
      config.newton.tol * (vol / dt) * (1.0 + prev.u.cwiseAbs().maxCoeff());
  const double thresh_phi =
      config.newton.tol * (1.0 + (vol * total_charge(p, prev.u)).lpNorm<Eigen::Infinity>() +
                           ctx.trhs.lpNorm<Eigen::Infinity>());

  Eigen::MatrixXd w = prev.w;
  CellField phi = prev.phi;
  Eigen::MatrixXd u = prev.u;

  if (config.coupled_newton) {
    solve_coupled(ctx, w, phi, u, thresh_sp, thresh_phi);
  } else {
    // Decoupled sweeps: species block at frozen potential, then the semilinear
    // Poisson update. The alternation contracts linearly with the charge
    // stiffness over the weakest potential mode, which can approach 1 for
    // strongly charged problems; once that contraction becomes the
    // bottleneck, a fully coupled Newton finisher takes over from the
    // current iterate.
    double best = std::numeric_limits<double>::infinity();
    bool converged = false;
    int sweep = 0;
    for (; sweep < config.max_sweeps; ++sweep) {
      solve_species_block(ctx, w, phi, u, 0.25 * thresh_sp);
      phi = solve_poisson_semilinear(p, op, w, ctx.traces, config.newton, &phi);
      u = ctx.recover(w, phi, u);
      const double rs = ctx.residual_species(u, w).lpNorm<Eigen::Infinity>();
      const double rp = ctx.residual_poisson(phi, u).lpNorm<Eigen::Infinity>();
      const double joint = std::max(rs / thresh_sp, rp / thresh_phi);
      if (joint <= 1.0) {
        converged = true;
        if (joint > 0.5 * best && sweep > 0) break;  // progress exhausted
        best = std::min(best, joint);
        if (joint <= 1e-3) break;
        continue;
      }
      if (sweep >= 1 && joint > 0.25 * best) break;  // slow contraction
      best = std::min(best, joint);
    }
    if (!converged) solve_coupled(ctx, w, phi, u, thresh_sp, thresh_phi);
  }

  // Pure-Neumann steps without regularization have a free additive gauge;
  // fix it by re-centering the potential (u is unchanged by construction).
  if (op.pure_neumann && (!(config.epsilon > 0.0) || p.z().isZero(0.0))) {
    const double mean = phi.mean();
    phi.array() -= mean;
    for (int i = 0; i < p.n_species(); ++i) w.col(i).array() -= p.z()[i] * mean;
  }

  State next;
  next.u = u;
  next.phi = phi;
  next.w = w;
  next.time = prev.time + dt;
  next.step = prev.step + 1;
  return next;
}

inline State advance(const ModelParams& p, const Grid& g, const LaplaceOperator& op,
                     const State& prev, const RunConfig& config, double dt, int halvings_left) {
  try {
    return single_step(p, g, op, prev, config, dt);
  } catch (const SolverError&) {
    if (halvings_left <= 0) throw;
    const State mid = advance(p, g, op, prev, config, 0.5 * dt, halvings_left - 1);
    return advance(p, g, op, mid, config, 0.5 * dt, halvings_left - 1);
  }
}

}  // namespace detail

/// Advances one implicit Euler step of size config.dt. On solver failure the
/// step is bisected up to newton.dt_halvings times before giving up. Species
/// masses are conserved by the flux structure; the check below guards the
/// solve quality (skipped for eps > 0, where the regularization deliberately
/// trades exact conservation for coercivity).
inline State solve_timestep(const ModelParams& p, const Grid& g, const LaplaceOperator& op,
                            const State& prev, const RunConfig& config) {
  if (!(config.dt > 0.0)) throw std::invalid_argument("solve_timestep: dt must be positive");
  State next = detail::advance(p, g, op, prev, config, config.dt, config.newton.dt_halvings);
  next.time = prev.time + config.dt;
  next.step = prev.step + 1;
  if (!(next.u.minCoeff() > 0.0))
    throw SolverError("solve_timestep: positivity lost", next.u.minCoeff(), 0);
  if (!(config.epsilon > 0.0)) {
    for (int i = 0; i < p.n_species(); ++i) {
      const double m_prev = cell_integral(g, prev.u.col(i));
      const double m_next = cell_integral(g, next.u.col(i));
      if (!(std::abs(m_next - m_prev) <= 1e-12 * (1.0 + std::abs(m_prev))))
        throw SolverError("solve_timestep: mass conservation drift", m_next - m_prev, 0);
    }
  }
  return next;
}

// Per-step statistics handed to the every-step sink: the diagnostics record
// plus the signed slack of the Rao entropy inequality probe (positive slack
// means the probe failed by that amount; reported, never asserted).
struct StepStats {
  DiagnosticsRecord record;
  double rao_slack = 0.0;
  double rao_scale = 1.0;
  const State* state = nullptr;
  const State* previous = nullptr;
};

struct RunSinks {
  std::function<void(const DiagnosticsRecord&)> record;      // at the output cadence
  std::function<void(int, const State&)> snapshot;           // at configured snapshot steps
  std::function<void(const StepStats&)> on_step;             // every accepted step
  std::function<void(const State&, const SolverError&)> on_failure;  // last good state
};

namespace detail {

// Discrete form of the Rao entropy balance over one step; returns lhs - rhs
// so positive values flag a violation.
inline double rao_inequality_slack(const ModelParams& p, const Grid& g, const State& prev,
                                   const State& next, const RunConfig& config, double h_r_prev,
                                   double h_r_next) {
  const int n = p.n_species();
  double a_form = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      a_form += p.a()(i, j) * interior_gradient_form(g, next.u.col(i), next.u.col(j));
  Eigen::MatrixXd q(g.n_cells(), n);  // p_i(u) + z_i phi per cell
  for (Eigen::Index k = 0; k < q.rows(); ++k)
    q.row(k) = (p.a() * next.u.row(k).transpose() + next.phi[k] * p.z()).transpose();
  double drift = 0.0;
  for (const auto& f : g.interior_faces)
    for (int i = 0; i < n; ++i) {
      const double dq = q(f.cell_a, i) - q(f.cell_b, i);
      drift += f.transmissibility *
               mobility_mean(next.u(f.cell_a, i), next.u(f.cell_b, i), next.w(f.cell_a, i),
                             next.w(f.cell_b, i), config.mobility) *
               dq * dq;
    }
  double cross = 0.0;
  for (int i = 0; i < n; ++i)
    cross += p.z()[i] * interior_gradient_form(g, next.u.col(i), next.phi);
  const double tau = next.time - prev.time;
  const double lhs = h_r_next + tau * (p.sigma() * a_form + drift);
  const double rhs = h_r_prev - tau * p.sigma() * cross;
  return lhs - rhs;
}

}  // namespace detail

/// Runs n_steps implicit Euler steps, emitting diagnostics and snapshots
/// through the sinks. Step failures propagate after the last good state was
/// offered to on_failure.
inline State run(const ModelParams& p, const Grid& g, const RunConfig& config,
                 const Eigen::MatrixXd& u0, const RunSinks& sinks = {}) {
  const LaplaceOperator op = assemble_laplacian(g);
  State state = initialize(p, g, u0);
  const CellField phi_d = harmonic_extension(op, g.dirichlet_traces());
  std::optional<Eigen::VectorXd> u_inf;
  if (g.pure_neumann()) u_inf = equilibrium_state(p, g, u0).u_inf;

  const auto record_of = [&](const State& s) {
    return make_record(p, g, s, phi_d, config.mobility, u_inf ? &*u_inf : nullptr);
  };
  const auto want_snapshot = [&](int step) {
    for (int s : config.snapshot_steps)
      if (s == step) return true;
    return false;
  };

  DiagnosticsRecord rec = record_of(state);
  if (sinks.record) sinks.record(rec);
  if (sinks.snapshot && want_snapshot(0)) sinks.snapshot(0, state);

  for (int k = 1; k <= config.n_steps; ++k) {
    State next;
    try {
      next = solve_timestep(p, g, op, state, config);
    } catch (const SolverError& err) {
      if (sinks.on_failure) sinks.on_failure(state, err);
      throw;
    }
    const DiagnosticsRecord next_rec = record_of(next);
    if (sinks.on_step) {
      StepStats stats;
      stats.record = next_rec;
      stats.rao_scale = 1.0 + std::abs(rec.h_r);
      stats.rao_slack =
          detail::rao_inequality_slack(p, g, state, next, config, rec.h_r, next_rec.h_r);
      stats.state = &next;
      stats.previous = &state;
      sinks.on_step(stats);
    }
    state = std::move(next);
    rec = next_rec;
    if (sinks.record && (k % config.output_every == 0 || k == config.n_steps))
      sinks.record(rec);
    if (sinks.snapshot && want_snapshot(k)) sinks.snapshot(k, state);
  }
  return state;
}

}  // namespace pnps
