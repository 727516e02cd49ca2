#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "pnps/errors.hpp"
#include "pnps/grid.hpp"
#include "pnps/model.hpp"
#include "pnps/types.hpp"

namespace pnps {

struct DiagnosticsRecord {
  int step = 0;
  double time = 0.0;
  double h_br = 0.0;        // Boltzmann-Rao entropy
  double h_r = 0.0;         // Rao (quadratic) entropy
  double production = 0.0;  // discrete entropy production
  Eigen::VectorXd masses;
  double u_min = 0.0, u_max = 0.0;
  double phi_min = 0.0, phi_max = 0.0;
  std::optional<double> h_rel_br;  // relative entropy to equilibrium (pure Neumann runs)
};

namespace detail {

inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

inline void require_state_sizes(const ModelParams& p, const Grid& g, const State& s,
                                const char* who) {
  if (s.u.rows() != g.n_cells() || s.u.cols() != p.n_species() || s.phi.size() != g.n_cells())
    throw std::invalid_argument(std::string(who) + ": state size mismatch");
}

}  // namespace detail

/// Boltzmann-Rao entropy: sigma sum_i u_i(log u_i - 1) + (1/2)|grad(phi - phi_d)|^2
/// + (1/2) u^T a u + sum_i z_i u_i phi_d, integrated over the domain. The
/// gradient term uses the same face transmissibilities as the Poisson operator.
inline double entropy_boltzmann_rao(const ModelParams& p, const Grid& g, const State& s,
                                    const CellField& phi_d) {
  detail::require_state_sizes(p, g, s, "entropy_boltzmann_rao");
  require_field(g, phi_d, "entropy_boltzmann_rao");
  double cellpart = 0.0;
  for (Eigen::Index k = 0; k < s.u.rows(); ++k) {
    const Eigen::VectorXd uk = s.u.row(k).transpose();
    double boltz = 0.0;
    for (Eigen::Index i = 0; i < uk.size(); ++i) boltz += detail::xlogx(uk[i]) - uk[i];
    cellpart += p.sigma() * boltz + 0.5 * uk.dot(p.a() * uk) + phi_d[k] * p.z().dot(uk);
  }
  return g.cell_volume * cellpart + dirichlet_energy(g, s.phi - phi_d);
}

/// Rao entropy: the Boltzmann-Rao entropy without the sigma u(log u - 1) part.
inline double entropy_rao(const ModelParams& p, const Grid& g, const State& s,
                          const CellField& phi_d) {
  detail::require_state_sizes(p, g, s, "entropy_rao");
  require_field(g, phi_d, "entropy_rao");
  double cellpart = 0.0;
  for (Eigen::Index k = 0; k < s.u.rows(); ++k) {
    const Eigen::VectorXd uk = s.u.row(k).transpose();
    cellpart += 0.5 * uk.dot(p.a() * uk) + phi_d[k] * p.z().dot(uk);
  }
  return g.cell_volume * cellpart + dirichlet_energy(g, s.phi - phi_d);
}

/// Discrete entropy production D = sum_i sum_faces T m(u_K, u_L) (w_K - w_L)^2.
inline double entropy_production(const ModelParams& p, const Grid& g, const State& s,
                                 MobilityMean mobility) {
  detail::require_state_sizes(p, g, s, "entropy_production");
  double d = 0.0;
  for (const auto& f : g.interior_faces)
    for (int i = 0; i < p.n_species(); ++i) {
      const double dw = s.w(f.cell_a, i) - s.w(f.cell_b, i);
      d += f.transmissibility *
           mobility_mean(s.u(f.cell_a, i), s.u(f.cell_b, i), s.w(f.cell_a, i), s.w(f.cell_b, i),
                         mobility) *
           dw * dw;
    }
  return d;
}

// Pointwise split of the entropy production integrand sum_i u_i |grad w_i|^2
// into square-root diffusion, drift, and the two signed cross terms. The four
// components sum to the total exactly.
struct ProductionSplit {
  double total = 0.0;
  double sqrt_diffusion = 0.0;   // 4 sigma^2 sum_i |grad sqrt(u_i)|^2
  double drift = 0.0;            // sum_i u_i |grad(p_i + z_i phi)|^2
  double steric_cross = 0.0;     // 2 sigma sum_ij a_ij grad u_i . grad u_j
  double potential_cross = 0.0;  // 2 sigma sum_i z_i grad u_i . grad phi

  double component_sum() const {
    return sqrt_diffusion + drift + steric_cross + potential_cross;
  }
};

inline ProductionSplit production_decomposition(const ModelParams& p, const Eigen::VectorXd& u,
                                                const Eigen::MatrixXd& grad_u,
                                                const Eigen::VectorXd& grad_phi) {
  const int n = p.n_species();
  if (u.size() != n || grad_u.rows() != n || grad_u.cols() != grad_phi.size())
    throw std::invalid_argument("production_decomposition: size mismatch");
  require_positive(u, "production_decomposition");
  const double sigma = p.sigma();
  ProductionSplit out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd q = p.z()[i] * grad_phi;
    for (int j = 0; j < n; ++j) q += p.a()(i, j) * grad_u.row(j).transpose();
    const Eigen::VectorXd gi = grad_u.row(i).transpose();
    out.total += u[i] * ((sigma / u[i]) * gi + q).squaredNorm();
    out.sqrt_diffusion += sigma * sigma * gi.squaredNorm() / u[i];
    out.drift += u[i] * q.squaredNorm();
    out.potential_cross += 2.0 * sigma * p.z()[i] * gi.dot(grad_phi);
    for (int j = 0; j < n; ++j)
      out.steric_cross += 2.0 * sigma * p.a()(i, j) * gi.dot(grad_u.row(j).transpose());
  }
  return out;
}

struct Equilibrium {
  Eigen::VectorXd u_inf;  // spatially constant concentrations
  double phi_inf = 0.0;
};

/// Thermal equilibrium of a pure-Neumann configuration: each species relaxes
/// to its mass divided by the domain measure, with zero potential.
inline Equilibrium equilibrium_state(const ModelParams& p, const Grid& g,
                                     const Eigen::MatrixXd& u0) {
  if (!g.pure_neumann())
    throw std::invalid_argument(
        "equilibrium_state: only pure Neumann configurations have a constant equilibrium");
  if (u0.rows() != g.n_cells() || u0.cols() != p.n_species())
    throw std::invalid_argument("equilibrium_state: initial data size mismatch");
  Equilibrium eq;
  eq.u_inf.resize(p.n_species());
  for (int i = 0; i < p.n_species(); ++i)
    eq.u_inf[i] = cell_integral(g, u0.col(i)) / g.domain_measure();
  eq.phi_inf = 0.0;
  return eq;
}

/// Relative entropy to the constant equilibrium (pure Neumann):
/// sigma sum_i int u_i log(u_i/u_inf_i) - (u_i - u_inf_i)
/// + (1/2)|grad phi|^2 + (1/2) (u-u_inf)^T a (u-u_inf); nonnegative.
inline double relative_entropy_boltzmann_rao(const ModelParams& p, const Grid& g, const State& s,
                                             const Eigen::VectorXd& u_inf) {
  detail::require_state_sizes(p, g, s, "relative_entropy_boltzmann_rao");
  if (u_inf.size() != p.n_species())
    throw std::invalid_argument("relative_entropy_boltzmann_rao: equilibrium size mismatch");
  require_positive(u_inf, "relative_entropy_boltzmann_rao");
  double cellpart = 0.0;
  for (Eigen::Index k = 0; k < s.u.rows(); ++k) {
    const Eigen::VectorXd du = s.u.row(k).transpose() - u_inf;
    double boltz = 0.0;
    for (int i = 0; i < p.n_species(); ++i) {
      const double ui = s.u(k, i);
      boltz += (ui > 0.0 ? ui * std::log(ui / u_inf[i]) : 0.0) - du[i];
    }
    cellpart += p.sigma() * boltz + 0.5 * du.dot(p.a() * du);
  }
  return g.cell_volume * cellpart + dirichlet_energy(g, s.phi);
}

/// Relative Rao entropy between two states on the same grid, in the exact
/// quadratic form (1/2)(u-ubar)^T a (u-ubar) + (1/2)|grad(phi-phibar)|^2.
inline double relative_entropy_rao(const ModelParams& p, const Grid& g, const State& s,
                                   const State& ref) {
  detail::require_state_sizes(p, g, s, "relative_entropy_rao");
  detail::require_state_sizes(p, g, ref, "relative_entropy_rao");
  double cellpart = 0.0;
  for (Eigen::Index k = 0; k < s.u.rows(); ++k) {
    const Eigen::VectorXd du = (s.u.row(k) - ref.u.row(k)).transpose();
    cellpart += 0.5 * du.dot(p.a() * du);
  }
  return g.cell_volume * cellpart + dirichlet_energy(g, s.phi - ref.phi);
}

/// Relative Rao entropy evaluated directly as the Bregman divergence
/// H_R(u) - H_R(ubar) - <H_R'(ubar), u - ubar>. Agrees with the quadratic
/// form whenever both potentials solve the discrete Poisson problem with the
/// same boundary data; kept as the second route of that cross-check.
inline double relative_entropy_rao_bregman(const ModelParams& p, const Grid& g, const State& s,
                                           const State& ref, const CellField& phi_d) {
  detail::require_state_sizes(p, g, s, "relative_entropy_rao_bregman");
  detail::require_state_sizes(p, g, ref, "relative_entropy_rao_bregman");
  double linear = 0.0;
  for (Eigen::Index k = 0; k < s.u.rows(); ++k) {
    const Eigen::VectorXd ubar = ref.u.row(k).transpose();
    const Eigen::VectorXd du = s.u.row(k).transpose() - ubar;
    const Eigen::VectorXd dh = ref.phi[k] * p.z() + p.a() * ubar;
    linear += dh.dot(du);
  }
  return entropy_rao(p, g, s, phi_d) - entropy_rao(p, g, ref, phi_d) - g.cell_volume * linear;
}

// Theoretical decay-rate bound sigma * min{2, 4 C_L sigma, 2 alpha / (C_P max a)}
// for pure-Neumann rectangles. C_P is the Poincare-Wirtinger constant of the
// rectangle; C_L a conservative convex-domain log-Sobolev constant. Informative
// only; the fitted rate is the measured quantity.
struct DecayTheory {
  double rate = 0.0;                     // sigma * min(candidates)
  std::array<double, 3> candidates{};    // {2, 4 C_L sigma, C(a)}
  double c_poincare = 0.0;
  double c_log_sobolev = 0.0;
  double alpha = 0.0;
  double max_a = 0.0;
};

inline DecayTheory decay_theory_constant(const ModelParams& p, const Grid& g) {
  if (!g.pure_neumann())
    throw std::invalid_argument("decay_theory_constant: pure Neumann configurations only");
  const double pi = 3.14159265358979323846;
  const double longest = g.dim == 2 ? std::max(g.lx, g.ly) : g.lx;
  const double diam_sq = g.dim == 2 ? g.lx * g.lx + g.ly * g.ly : g.lx * g.lx;
  DecayTheory out;
  out.c_poincare = (longest / pi) * (longest / pi);
  out.c_log_sobolev = pi * pi / (2.0 * diam_sq);
  out.alpha = p.alpha();
  out.max_a = p.max_a();
  out.candidates = {2.0, 4.0 * out.c_log_sobolev * p.sigma(),
                    2.0 * out.alpha / (out.c_poincare * out.max_a)};
  out.rate = p.sigma() * std::min({out.candidates[0], out.candidates[1], out.candidates[2]});
  return out;
}

struct DecayFit {
  double rate = 0.0;       // -slope of the log-linear fit
  double intercept = 0.0;  // fitted log value at t = 0
  double r_squared = 0.0;
  double t_lo = 0.0, t_hi = 0.0;
  int n_points = 0;
};

/// Least-squares line through (t, log H) for samples inside [t_lo, t_hi].
/// Nonpositive values in the window mean the state already reached equilibrium
/// to machine precision and raise a FitError.
inline DecayFit fit_decay(const std::vector<std::pair<double, double>>& series, double t_lo,
                          double t_hi) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& [t, h] : series) {
    if (t < t_lo || t > t_hi) continue;
    if (!(h > 0.0)) throw FitError("fit_decay: nonpositive value inside the fit window");
    pts.emplace_back(t, std::log(h));
  }
  if (pts.size() < 5) throw FitError("fit_decay: need at least 5 samples inside the window");
  double st = 0.0, sy = 0.0;
  for (const auto& [t, y] : pts) {
    st += t;
    sy += y;
  }
  const double n = static_cast<double>(pts.size());
  const double tm = st / n, ym = sy / n;
  double stt = 0.0, sty = 0.0, syy = 0.0;
  for (const auto& [t, y] : pts) {
    stt += (t - tm) * (t - tm);
    sty += (t - tm) * (y - ym);
    syy += (y - ym) * (y - ym);
  }
  if (!(stt > 0.0)) throw FitError("fit_decay: degenerate time window");
  const double slope = sty / stt;
  DecayFit fit;
  fit.rate = -slope;
  fit.intercept = ym - slope * tm;
  const double ss_res = syy - slope * sty;
  fit.r_squared = syy > 0.0 ? std::max(0.0, 1.0 - ss_res / syy) : 1.0;
  fit.t_lo = t_lo;
  fit.t_hi = t_hi;
  fit.n_points = static_cast<int>(pts.size());
  return fit;
}

/// Central fit window: drops the first and last tenth of the samples.
inline std::pair<double, double> default_fit_window(
    const std::vector<std::pair<double, double>>& series) {
  if (series.size() < 3) throw FitError("default_fit_window: too few samples");
  const std::size_t lo = series.size() / 10;
  const std::size_t hi = series.size() - 1 - series.size() / 10;
  return {series[lo].first, series[hi].first};
}

inline DiagnosticsRecord make_record(const ModelParams& p, const Grid& g, const State& s,
                                     const CellField& phi_d, MobilityMean mobility,
                                     const Eigen::VectorXd* u_inf = nullptr) {
  DiagnosticsRecord rec;
  rec.step = s.step;
  rec.time = s.time;
  rec.h_br = entropy_boltzmann_rao(p, g, s, phi_d);
  rec.h_r = entropy_rao(p, g, s, phi_d);
  rec.production = entropy_production(p, g, s, mobility);
  rec.masses.resize(p.n_species());
  for (int i = 0; i < p.n_species(); ++i) rec.masses[i] = cell_integral(g, s.u.col(i));
  rec.u_min = s.u.minCoeff();
  rec.u_max = s.u.maxCoeff();
  rec.phi_min = s.phi.minCoeff();
  rec.phi_max = s.phi.maxCoeff();
  if (u_inf) rec.h_rel_br = relative_entropy_boltzmann_rao(p, g, s, *u_inf);
  if (!rec.masses.allFinite() || !(rec.u_min > 0.0))
    throw std::domain_error("make_record: state has nonpositive or nonfinite concentrations");
  return rec;
}

}  // namespace pnps
