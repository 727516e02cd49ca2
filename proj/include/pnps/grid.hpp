#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace pnps {

using CellField = Eigen::VectorXd;

enum class Side { left, right, bottom, top };
enum class BoundaryCondition { neumann, dirichlet };

struct SideSpec {
  BoundaryCondition bc = BoundaryCondition::neumann;
  double value = 0.0;  // Dirichlet trace for the potential
};

struct BoundarySpec {
  SideSpec left, right, bottom, top;
};

struct InteriorFace {
  int cell_a = 0, cell_b = 0;
  double transmissibility = 0.0;
};

struct BoundaryFace {
  int cell = 0;
  Side side = Side::left;
  double transmissibility = 0.0;
  BoundaryCondition bc = BoundaryCondition::neumann;
  double value = 0.0;
};

// Uniform cell-centered rectangular mesh with two-point flux transmissibilities.
// Cell fields are stored row-major, index = iy*nx + ix. Interior faces are
// enumerated x-direction first then y-direction, each row-major; boundary faces
// left, right, bottom, top. Treat as immutable after build_grid.
struct Grid {
  int dim = 1;
  int nx = 0, ny = 1;
  double lx = 0.0, ly = 1.0;
  double hx = 0.0, hy = 1.0;
  double cell_volume = 0.0;
  std::vector<InteriorFace> interior_faces;
  std::vector<BoundaryFace> boundary_faces;

  int n_cells() const { return nx * ny; }
  int cell_index(int ix, int iy) const { return iy * nx + ix; }
  Eigen::Vector2d cell_center(int k) const {
    const int iy = k / nx, ix = k % nx;
    return {(ix + 0.5) * hx, dim == 2 ? (iy + 0.5) * hy : 0.0};
  }
  double domain_measure() const { return dim == 2 ? lx * ly : lx; }
  bool pure_neumann() const {
    for (const auto& f : boundary_faces)
      if (f.bc == BoundaryCondition::dirichlet) return false;
    return true;
  }
  // Per-boundary-face trace vector from the stored side values (zero on
  // Neumann faces).
  Eigen::VectorXd dirichlet_traces() const {
    Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(boundary_faces.size()));
    for (std::size_t i = 0; i < boundary_faces.size(); ++i)
      if (boundary_faces[i].bc == BoundaryCondition::dirichlet) t[static_cast<Eigen::Index>(i)] = boundary_faces[i].value;
    return t;
  }
};

inline Grid build_grid(int dim, int nx, int ny, double lx, double ly, const BoundarySpec& spec) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("build_grid: dim must be 1 or 2");
  if (nx < 1 || (dim == 2 && ny < 1))
    throw std::invalid_argument("build_grid: cell counts must be at least 1");
  if (!(lx > 0.0) || (dim == 2 && !(ly > 0.0)))
    throw std::invalid_argument("build_grid: side lengths must be positive");

  Grid g;
  g.dim = dim;
  g.nx = nx;
  g.ny = dim == 2 ? ny : 1;
  g.lx = lx;
  g.ly = dim == 2 ? ly : 1.0;
  g.hx = g.lx / g.nx;
  g.hy = g.ly / g.ny;
  g.cell_volume = g.hx * g.hy;

  const double tx = g.hy / g.hx;
  for (int iy = 0; iy < g.ny; ++iy)
    for (int ix = 0; ix + 1 < g.nx; ++ix)
      g.interior_faces.push_back({g.cell_index(ix, iy), g.cell_index(ix + 1, iy), tx});
  if (dim == 2) {
    const double ty = g.hx / g.hy;
    for (int iy = 0; iy + 1 < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix)
        g.interior_faces.push_back({g.cell_index(ix, iy), g.cell_index(ix, iy + 1), ty});
  }

  // Dirichlet data acts across the half-cell distance, hence the factor 2.
  const auto add = [&g](int cell, Side side, double t, const SideSpec& s) {
    g.boundary_faces.push_back({cell, side, 2.0 * t, s.bc, s.value});
  };
  for (int iy = 0; iy < g.ny; ++iy) add(g.cell_index(0, iy), Side::left, tx, spec.left);
  for (int iy = 0; iy < g.ny; ++iy) add(g.cell_index(g.nx - 1, iy), Side::right, tx, spec.right);
  if (dim == 2) {
    const double ty = g.hx / g.hy;
    for (int ix = 0; ix < g.nx; ++ix) add(g.cell_index(ix, 0), Side::bottom, ty, spec.bottom);
    for (int ix = 0; ix < g.nx; ++ix) add(g.cell_index(ix, g.ny - 1), Side::top, ty, spec.top);
  }
  return g;
}

inline void require_field(const Grid& g, const CellField& f, const char* who) {
  if (f.size() != g.n_cells())
    throw std::invalid_argument(std::string(who) + ": field size mismatch");
}

/// Discrete integral over the domain.
inline double cell_integral(const Grid& g, const CellField& f) {
  require_field(g, f, "cell_integral");
  return g.cell_volume * f.sum();
}

/// Discrete gradient bilinear form sum_f T_f (df)(dg). Dirichlet boundary
/// faces enter with differences to the supplied traces; Neumann faces do not
/// contribute. This is the exact quadratic form of the assembled operator.
inline double face_gradient_form(const Grid& g, const CellField& f, const CellField& h,
                                 const Eigen::VectorXd& f_traces,
                                 const Eigen::VectorXd& h_traces) {
  require_field(g, f, "face_gradient_form");
  require_field(g, h, "face_gradient_form");
  const auto nb = static_cast<Eigen::Index>(g.boundary_faces.size());
  if (f_traces.size() != nb || h_traces.size() != nb)
    throw std::invalid_argument("face_gradient_form: trace vector size mismatch");
  double s = 0.0;
  for (const auto& face : g.interior_faces)
    s += face.transmissibility * (f[face.cell_a] - f[face.cell_b]) *
         (h[face.cell_a] - h[face.cell_b]);
  for (Eigen::Index i = 0; i < nb; ++i) {
    const auto& face = g.boundary_faces[static_cast<std::size_t>(i)];
    if (face.bc == BoundaryCondition::dirichlet)
      s += face.transmissibility * (f[face.cell] - f_traces[i]) * (h[face.cell] - h_traces[i]);
  }
  return s;
}

/// Gradient form over interior faces only (fields with no-flux boundaries).
inline double interior_gradient_form(const Grid& g, const CellField& f, const CellField& h) {
  require_field(g, f, "interior_gradient_form");
  require_field(g, h, "interior_gradient_form");
  double s = 0.0;
  for (const auto& face : g.interior_faces)
    s += face.transmissibility * (f[face.cell_a] - f[face.cell_b]) *
         (h[face.cell_a] - h[face.cell_b]);
  return s;
}

/// (1/2) sum_f T_f (df)^2 including Dirichlet faces against the given traces.
inline double dirichlet_energy(const Grid& g, const CellField& f, const Eigen::VectorXd& traces) {
  return 0.5 * face_gradient_form(g, f, f, traces, traces);
}

/// Same with zero traces (for difference fields that vanish on Dirichlet parts).
inline double dirichlet_energy(const Grid& g, const CellField& f) {
  const Eigen::VectorXd zero =
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.boundary_faces.size()));
  return dirichlet_energy(g, f, zero);
}

}  // namespace pnps
