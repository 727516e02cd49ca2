#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pnps/config.hpp"
#include "pnps/diagnostics.hpp"
#include "pnps/grid.hpp"
#include "pnps/types.hpp"

namespace pnps {

/// Fixed 17-significant-digit scientific formatting; round-trips doubles
/// exactly, so identical inputs serialize to identical bytes.
inline std::string format_float(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", x);
  return buf;
}

namespace iodetail {

inline std::ofstream open_out(const std::filesystem::path& path, const char* who) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(std::string(who) + ": cannot open " + path.string());
  return out;
}

}  // namespace iodetail

/// CSV snapshot "x,y,u1,...,un,phi", one row per cell in storage order.
inline void write_snapshot(const std::filesystem::path& path, const Grid& g, const State& s) {
  if (s.u.rows() != g.n_cells() || s.phi.size() != g.n_cells())
    throw std::invalid_argument("write_snapshot: state size mismatch");
  auto out = iodetail::open_out(path, "write_snapshot");
  out << "x,y";
  for (int i = 1; i <= s.n_species(); ++i) out << ",u" << i;
  out << ",phi\n";
  for (int k = 0; k < g.n_cells(); ++k) {
    const Eigen::Vector2d c = g.cell_center(k);
    out << format_float(c.x()) << ',' << format_float(c.y());
    for (int i = 0; i < s.n_species(); ++i) out << ',' << format_float(s.u(k, i));
    out << ',' << format_float(s.phi[k]) << '\n';
  }
  if (!out) throw std::runtime_error("write_snapshot: write failed for " + path.string());
}

/// Reads a snapshot written by write_snapshot back onto the same grid.
inline std::pair<Eigen::MatrixXd, CellField> read_snapshot(const std::filesystem::path& path,
                                                           const Grid& g, int n_species) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_snapshot: cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("read_snapshot: empty file " + path.string());
  const int expected_cols = 2 + n_species + 1;
  Eigen::MatrixXd u(g.n_cells(), n_species);
  CellField phi(g.n_cells());
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= g.n_cells())
      throw std::runtime_error("read_snapshot: too many rows in " + path.string());
    std::istringstream ls(line);
    std::string item;
    std::vector<double> vals;
    while (std::getline(ls, item, ',')) vals.push_back(std::stod(item));
    if (static_cast<int>(vals.size()) != expected_cols)
      throw std::runtime_error("read_snapshot: wrong column count in " + path.string());
    for (int i = 0; i < n_species; ++i) u(row, i) = vals[static_cast<std::size_t>(2 + i)];
    phi[row] = vals.back();
    ++row;
  }
  if (row != g.n_cells())
    throw std::runtime_error("read_snapshot: row count does not match grid in " + path.string());
  return {u, phi};
}

/// CSV timeseries; the relative-entropy column appears only when every record
/// carries it (pure Neumann runs).
inline void write_timeseries(const std::filesystem::path& path,
                             const std::vector<DiagnosticsRecord>& records, int n_species) {
  auto out = iodetail::open_out(path, "write_timeseries");
  bool with_rel = !records.empty();
  for (const auto& r : records) with_rel = with_rel && r.h_rel_br.has_value();
  out << "step,time,H_BR,H_R,production";
  for (int i = 1; i <= n_species; ++i) out << ",mass_" << i;
  out << ",u_min,u_max,phi_min,phi_max";
  if (with_rel) out << ",H_rel_BR";
  out << '\n';
  for (const auto& r : records) {
    out << r.step << ',' << format_float(r.time) << ',' << format_float(r.h_br) << ','
        << format_float(r.h_r) << ',' << format_float(r.production);
    for (int i = 0; i < n_species; ++i) out << ',' << format_float(r.masses[i]);
    out << ',' << format_float(r.u_min) << ',' << format_float(r.u_max) << ','
        << format_float(r.phi_min) << ',' << format_float(r.phi_max);
    if (with_rel) out << ',' << format_float(*r.h_rel_br);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_timeseries: write failed for " + path.string());
}

/// Legacy VTK structured-points export of the same snapshot data.
inline void write_snapshot_vtk(const std::filesystem::path& path, const Grid& g, const State& s) {
  auto out = iodetail::open_out(path, "write_snapshot_vtk");
  out << "# vtk DataFile Version 3.0\n";
  out << "pnps snapshot step " << s.step << "\n";
  out << "ASCII\nDATASET STRUCTURED_POINTS\n";
  out << "DIMENSIONS " << g.nx << ' ' << g.ny << " 1\n";
  out << "ORIGIN " << format_float(0.5 * g.hx) << ' ' << format_float(g.dim == 2 ? 0.5 * g.hy : 0.0)
      << " 0\n";
  out << "SPACING " << format_float(g.hx) << ' ' << format_float(g.dim == 2 ? g.hy : 1.0)
      << " 1\n";
  out << "POINT_DATA " << g.n_cells() << '\n';
  const auto scalar = [&](const std::string& name, const CellField& f) {
    out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (int k = 0; k < g.n_cells(); ++k) out << format_float(f[k]) << '\n';
  };
  for (int i = 0; i < s.n_species(); ++i) scalar("u" + std::to_string(i + 1), s.u.col(i));
  scalar("phi", s.phi);
  if (!out) throw std::runtime_error("write_snapshot_vtk: write failed for " + path.string());
}

/// Evaluates the configured initial data on the grid; rows are cells, columns
/// species. The result must be strictly positive.
inline Eigen::MatrixXd make_initial_data(const ExperimentConfig& c, const Grid& g) {
  Eigen::MatrixXd u0(g.n_cells(), c.n_species);
  switch (c.init.kind) {
    case InitSpec::Kind::constant:
      for (int i = 0; i < c.n_species; ++i) u0.col(i).setConstant(c.init.values[i]);
      break;
    case InitSpec::Kind::gaussian:
      for (int i = 0; i < c.n_species; ++i) {
        const Eigen::Vector2d ctr = c.init.centers[static_cast<std::size_t>(i)];
        for (int k = 0; k < g.n_cells(); ++k) {
          const Eigen::Vector2d x = g.cell_center(k);
          double r2 = (x.x() - ctr.x()) * (x.x() - ctr.x());
          if (g.dim == 2) r2 += (x.y() - ctr.y()) * (x.y() - ctr.y());
          u0(k, i) = c.init.offset + c.init.amplitude * std::exp(-c.init.width * r2);
        }
      }
      break;
    case InitSpec::Kind::file:
      u0 = read_snapshot(c.init.path, g, c.n_species).first;
      break;
    case InitSpec::Kind::unset:
      throw ConfigError("config key `init.kind`: is required");
  }
  if (!(u0.minCoeff() > 0.0))
    throw ConfigError("config key `init.*`: initial data must be strictly positive everywhere");
  return u0;
}

}  // namespace pnps
