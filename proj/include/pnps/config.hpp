#pragma once

#include <Eigen/Dense>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pnps/errors.hpp"
#include "pnps/grid.hpp"
#include "pnps/model.hpp"
#include "pnps/types.hpp"

namespace pnps {

struct InitSpec {
  enum class Kind { unset, constant, gaussian, file };
  Kind kind = Kind::unset;
  Eigen::VectorXd values;                  // constant: one value per species
  double offset = 0.0;                     // gaussian baseline
  double width = 100.0;                    // gaussian exponent factor
  double amplitude = 1.0;                  // gaussian peak height above the baseline
  std::vector<Eigen::Vector2d> centers;    // gaussian: one center per species
  std::string path;                        // file: snapshot to load
};

struct ExperimentConfig {
  std::string preset;  // name this configuration expanded from, if any
  int n_species = 0;
  double sigma = 0.0;
  Eigen::VectorXd z;
  Eigen::MatrixXd a;
  int dim = 0;
  int nx = 0, ny = 1;
  double lx = 0.0, ly = 1.0;
  BoundarySpec boundary;
  InitSpec init;
  RunConfig run;
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] inline void fail(const std::string& key, const std::string& why) {
  throw ConfigError("config key `" + key + "`: " + why);
}

inline double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) fail(key, "expected a number, got `" + v + "`");
    return x;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(key, "expected a number, got `" + v + "`");
  }
}

inline int to_int(const std::string& key, const std::string& v) {
  const double x = to_real(key, v);
  const int i = static_cast<int>(x);
  if (static_cast<double>(i) != x) fail(key, "expected an integer, got `" + v + "`");
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(key, "expected true or false, got `" + v + "`");
}

// Splits a bracketed list at top-level commas.
inline std::vector<std::string> split_list(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']')
    fail(key, "expected a bracketed list, got `" + v + "`");
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    const char c = s[i];
    if (c == '[') ++depth;
    if (c == ']') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  if (depth != 0) fail(key, "unbalanced brackets in `" + v + "`");
  return out;
}

inline Eigen::VectorXd to_vector(const std::string& key, const std::string& v) {
  const auto items = split_list(key, v);
  Eigen::VectorXd out(static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = to_real(key, items[i]);
  return out;
}

inline Eigen::MatrixXd to_matrix(const std::string& key, const std::string& v) {
  const auto rows = split_list(key, v);
  if (rows.empty()) fail(key, "matrix must have at least one row");
  Eigen::MatrixXd out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Eigen::VectorXd row = to_vector(key, rows[r]);
    if (r == 0) out.resize(static_cast<Eigen::Index>(rows.size()), row.size());
    if (row.size() != out.cols()) fail(key, "matrix rows have unequal lengths");
    out.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return out;
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  const auto items = split_list(key, v);
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(to_int(key, it));
  return out;
}

// Gaussian centers: [[x, y], ...] or a flat [x, ...] for one-dimensional runs.
inline std::vector<Eigen::Vector2d> to_centers(const std::string& key, const std::string& v) {
  const auto items = split_list(key, v);
  std::vector<Eigen::Vector2d> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    if (!it.empty() && it.front() == '[') {
      const Eigen::VectorXd c = to_vector(key, it);
      if (c.size() == 1)
        out.emplace_back(c[0], 0.0);
      else if (c.size() == 2)
        out.emplace_back(c[0], c[1]);
      else
        fail(key, "each center needs 1 or 2 coordinates");
    } else {
      out.emplace_back(to_real(key, it), 0.0);
    }
  }
  return out;
}

inline SideSpec to_side(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  std::string word;
  in >> word;
  SideSpec s;
  if (word == "neumann") {
    s.bc = BoundaryCondition::neumann;
  } else if (word == "dirichlet") {
    s.bc = BoundaryCondition::dirichlet;
    std::string num;
    if (!(in >> num)) fail(key, "dirichlet needs a value, e.g. `dirichlet 0.1`");
    s.value = to_real(key, num);
  } else {
    fail(key, "expected `neumann` or `dirichlet VALUE`, got `" + v + "`");
  }
  std::string extra;
  if (in >> extra) fail(key, "unexpected trailing token `" + extra + "`");
  return s;
}

}  // namespace cfgdetail

inline std::vector<std::string> preset_names() { return {"paper-sec5", "decay-1d", "wsu-1d"}; }

/// Three-species benchmark on the unit square: mixed boundary conditions for
/// the potential (Dirichlet 0.1 left/right, Neumann top/bottom), strongly
/// charged species (-5, 5, -5), Gaussian initial bumps on the diagonal, and a
/// 20x20 grid (cell size 0.05) run for 380 steps of 4e-5.
inline ExperimentConfig preset_paper_sec5() {
  ExperimentConfig c;
  c.preset = "paper-sec5";
  c.n_species = 3;
  c.sigma = 1.0;
  c.z = Eigen::Vector3d(-5.0, 5.0, -5.0);
  c.a.resize(3, 3);
  c.a << 2.5, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 0.5, 0.5;
  c.dim = 2;
  c.nx = c.ny = 20;
  c.lx = c.ly = 1.0;
  c.boundary.left = {BoundaryCondition::dirichlet, 0.1};
  c.boundary.right = {BoundaryCondition::dirichlet, 0.1};
  c.boundary.bottom = {BoundaryCondition::neumann, 0.0};
  c.boundary.top = {BoundaryCondition::neumann, 0.0};
  c.init.kind = InitSpec::Kind::gaussian;
  c.init.offset = 0.5;
  c.init.width = 100.0;
  c.init.amplitude = 1.0;
  c.init.centers = {{0.25, 0.75}, {0.5, 0.5}, {0.75, 0.25}};
  c.run.dt = 4e-5;
  c.run.n_steps = 380;
  c.run.snapshot_steps = {0, 30, 380};
  return c;
}

/// Two oppositely charged species relaxing to the constant equilibrium on a
/// 64-cell interval with insulating boundaries; mirrored Gaussian bumps keep
/// the net charge exactly zero.
inline ExperimentConfig preset_decay_1d() {
  ExperimentConfig c;
  c.preset = "decay-1d";
  c.n_species = 2;
  c.sigma = 1.0;
  c.z = Eigen::Vector2d(1.0, -1.0);
  c.a = Eigen::Matrix2d::Identity();
  c.dim = 1;
  c.nx = 64;
  c.lx = 1.0;
  c.init.kind = InitSpec::Kind::gaussian;
  c.init.offset = 0.5;
  c.init.width = 50.0;
  c.init.amplitude = 1.0;
  c.init.centers = {{0.3, 0.0}, {0.7, 0.0}};
  c.run.dt = 5e-4;
  c.run.n_steps = 200;
  return c;
}

/// Coarse base configuration for the refinement probe: same physics as
/// decay-1d on 16 cells with a matching coarse time step.
inline ExperimentConfig preset_wsu_1d() {
  ExperimentConfig c = preset_decay_1d();
  c.preset = "wsu-1d";
  c.nx = 16;
  c.run.dt = 2e-3;
  c.run.n_steps = 25;
  return c;
}

inline ExperimentConfig preset_by_name(const std::string& name) {
  if (name == "paper-sec5") return preset_paper_sec5();
  if (name == "decay-1d") return preset_decay_1d();
  if (name == "wsu-1d") return preset_wsu_1d();
  throw ConfigError("unknown preset `" + name + "` (try `presets` for the list)");
}

namespace cfgdetail {

inline void apply_keys(ExperimentConfig& c, std::map<std::string, std::string>& kv) {
  const auto take = [&kv](const std::string& key) -> std::optional<std::string> {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };

  if (auto v = take("model.n_species")) c.n_species = to_int("model.n_species", *v);
  if (auto v = take("model.sigma")) c.sigma = to_real("model.sigma", *v);
  if (auto v = take("model.z")) c.z = to_vector("model.z", *v);
  if (auto v = take("model.a")) c.a = to_matrix("model.a", *v);
  if (auto v = take("grid.dim")) c.dim = to_int("grid.dim", *v);
  if (auto v = take("grid.nx")) c.nx = to_int("grid.nx", *v);
  if (auto v = take("grid.ny")) c.ny = to_int("grid.ny", *v);
  if (auto v = take("grid.Lx")) c.lx = to_real("grid.Lx", *v);
  if (auto v = take("grid.Ly")) c.ly = to_real("grid.Ly", *v);
  if (auto v = take("boundary.left")) c.boundary.left = to_side("boundary.left", *v);
  if (auto v = take("boundary.right")) c.boundary.right = to_side("boundary.right", *v);
  if (auto v = take("boundary.bottom")) c.boundary.bottom = to_side("boundary.bottom", *v);
  if (auto v = take("boundary.top")) c.boundary.top = to_side("boundary.top", *v);
  if (auto v = take("init.kind")) {
    if (*v == "constant")
      c.init.kind = InitSpec::Kind::constant;
    else if (*v == "gaussian")
      c.init.kind = InitSpec::Kind::gaussian;
    else if (*v == "file")
      c.init.kind = InitSpec::Kind::file;
    else
      fail("init.kind", "expected constant, gaussian or file");
  }
  if (auto v = take("init.values")) c.init.values = to_vector("init.values", *v);
  if (auto v = take("init.offset")) c.init.offset = to_real("init.offset", *v);
  if (auto v = take("init.width")) c.init.width = to_real("init.width", *v);
  if (auto v = take("init.amplitude")) c.init.amplitude = to_real("init.amplitude", *v);
  if (auto v = take("init.centers")) c.init.centers = to_centers("init.centers", *v);
  if (auto v = take("init.path")) c.init.path = *v;
  if (auto v = take("run.dt")) c.run.dt = to_real("run.dt", *v);
  if (auto v = take("run.n_steps")) c.run.n_steps = to_int("run.n_steps", *v);
  if (auto v = take("run.epsilon")) c.run.epsilon = to_real("run.epsilon", *v);
  if (auto v = take("run.mobility")) {
    if (*v == "arithmetic")
      c.run.mobility = MobilityMean::arithmetic;
    else if (*v == "upwind")
      c.run.mobility = MobilityMean::upwind;
    else
      fail("run.mobility", "expected arithmetic or upwind");
  }
  if (auto v = take("run.output_every")) c.run.output_every = to_int("run.output_every", *v);
  if (auto v = take("run.snapshot_steps"))
    c.run.snapshot_steps = to_int_list("run.snapshot_steps", *v);
  if (auto v = take("solver.tol")) c.run.newton.tol = to_real("solver.tol", *v);
  if (auto v = take("solver.max_iter")) c.run.newton.max_iter = to_int("solver.max_iter", *v);
  if (auto v = take("solver.max_halvings"))
    c.run.newton.max_halvings = to_int("solver.max_halvings", *v);
  if (auto v = take("solver.dt_halvings"))
    c.run.newton.dt_halvings = to_int("solver.dt_halvings", *v);
  if (auto v = take("solver.max_sweeps")) c.run.max_sweeps = to_int("solver.max_sweeps", *v);
  if (auto v = take("solver.coupled")) c.run.coupled_newton = to_bool("solver.coupled", *v);

  if (!kv.empty()) fail(kv.begin()->first, "unknown key");
}

}  // namespace cfgdetail

/// Full semantic validation; throws ConfigError naming the offending key.
inline void validate_config(const ExperimentConfig& c) {
  using cfgdetail::fail;
  if (c.n_species < 1) fail("model.n_species", "must be at least 1");
  if (!(c.sigma > 0.0)) fail("model.sigma", "must be positive");
  if (c.z.size() != c.n_species) fail("model.z", "needs one charge per species");
  if (c.a.rows() != c.n_species || c.a.cols() != c.n_species)
    fail("model.a", "must be n_species x n_species");
  try {
    ModelParams probe(c.sigma, c.z, c.a);
  } catch (const std::invalid_argument& err) {
    fail("model.a", err.what());
  }
  if (c.dim != 1 && c.dim != 2) fail("grid.dim", "must be 1 or 2");
  if (c.nx < 1) fail("grid.nx", "must be at least 1");
  if (c.dim == 2 && c.ny < 1) fail("grid.ny", "must be at least 1");
  if (!(c.lx > 0.0)) fail("grid.Lx", "must be positive");
  if (c.dim == 2 && !(c.ly > 0.0)) fail("grid.Ly", "must be positive");
  switch (c.init.kind) {
    case InitSpec::Kind::unset:
      fail("init.kind", "is required");
    case InitSpec::Kind::constant:
      if (c.init.values.size() != c.n_species) fail("init.values", "needs one value per species");
      if (!(c.init.values.minCoeff() > 0.0)) fail("init.values", "must be strictly positive");
      break;
    case InitSpec::Kind::gaussian:
      if (static_cast<int>(c.init.centers.size()) != c.n_species)
        fail("init.centers", "needs one center per species");
      if (!(c.init.width > 0.0)) fail("init.width", "must be positive");
      break;
    case InitSpec::Kind::file:
      if (c.init.path.empty()) fail("init.path", "is required for file initial data");
      break;
  }
  if (!(c.run.dt > 0.0)) fail("run.dt", "must be positive");
  if (c.run.n_steps < 0) fail("run.n_steps", "must be nonnegative");
  if (c.run.epsilon < 0.0) fail("run.epsilon", "must be nonnegative");
  if (c.run.output_every < 1) fail("run.output_every", "must be at least 1");
  for (int s : c.run.snapshot_steps)
    if (s < 0) fail("run.snapshot_steps", "steps must be nonnegative");
  if (!(c.run.newton.tol > 0.0)) fail("solver.tol", "must be positive");
  if (c.run.newton.max_iter < 1) fail("solver.max_iter", "must be at least 1");
  if (c.run.max_sweeps < 1) fail("solver.max_sweeps", "must be at least 1");
}

/// Parses the flat key-value format: one `key = value` per line, `#` starts a
/// comment line, arrays in bracket syntax. A `preset = NAME` line expands the
/// named preset first; remaining keys override its fields. Unknown keys are
/// rejected.
inline ExperimentConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = cfgdetail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = cfgdetail::trim(t.substr(0, eq));
    const std::string value = cfgdetail::trim(t.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": expected `key = value`");
    if (kv.count(key)) cfgdetail::fail(key, "duplicated");
    kv[key] = value;
  }

  ExperimentConfig c;
  if (const auto it = kv.find("preset"); it != kv.end()) {
    c = preset_by_name(it->second);
    kv.erase(it);
  }
  const bool had_top = kv.count("boundary.top") || kv.count("boundary.bottom");
  cfgdetail::apply_keys(c, kv);
  if (c.dim == 1 && had_top)
    cfgdetail::fail("boundary.top", "not applicable to one-dimensional grids");
  validate_config(c);
  return c;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

inline ModelParams make_model(const ExperimentConfig& c) {
  return ModelParams(c.sigma, c.z, c.a);
}

inline Grid make_grid(const ExperimentConfig& c) {
  return build_grid(c.dim, c.nx, c.ny, c.lx, c.ly, c.boundary);
}

}  // namespace pnps
