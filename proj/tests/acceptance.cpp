// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Runs everything from in-memory drivers; the mixed-boundary
// benchmark run is shared by the criteria that probe it.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pnps/commands.hpp"
#include "pnps/config.hpp"
#include "pnps/diagnostics.hpp"
#include "pnps/io.hpp"
#include "pnps/scheme.hpp"

using namespace pnps;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Criterion {
  std::string name;
  bool ok = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<Criterion> results;

template <typename Fn>
void criterion(const std::string& name, double time_limit, Fn&& fn) {
  Criterion c;
  c.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    c.detail = fn();
    c.ok = true;
  } catch (const std::exception& e) {
    c.detail = e.what();
    c.ok = false;
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (c.ok && time_limit > 0.0 && c.seconds > time_limit) {
    c.ok = false;
    c.detail += " [exceeded " + std::to_string(time_limit) + " s budget]";
  }
  results.push_back(c);
  std::printf("[%s] %s (%.2f s)%s%s\n", c.ok ? "PASS" : "FAIL", c.name.c_str(), c.seconds,
              c.detail.empty() ? "" : " -- ", c.detail.c_str());
  std::fflush(stdout);
}

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

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

// Shared data from the mixed-boundary benchmark run.
struct Sec5Run {
  Grid grid;
  Eigen::VectorXd mass0;
  double max_mass_drift = 0.0;
  double min_u = 1e300;
  double worst_entropy_slack = -1e300;       // H^k - H^{k-1}, band-normalized
  double worst_strengthened_slack = -1e300;  // H^k + tau D^k - H^{k-1}, band-normalized
  int strengthened_logged = 0;
  State first, last;
  bool ran = false;
};

Sec5Run sec5;

void run_sec5() {
  const ExperimentConfig cfg = preset_paper_sec5();
  const ModelParams model = make_model(cfg);
  sec5.grid = make_grid(cfg);
  const Eigen::MatrixXd u0 = make_initial_data(cfg, sec5.grid);
  sec5.mass0.resize(3);
  for (int i = 0; i < 3; ++i) sec5.mass0[i] = cell_integral(sec5.grid, u0.col(i));
  double prev_h = 0.0;
  bool have_prev = false;
  RunSinks sinks;
  sinks.snapshot = [&](int step, const State& s) {
    if (step == 0) sec5.first = s;
    if (step == 380) sec5.last = s;
  };
  sinks.on_step = [&](const StepStats& st) {
    sec5.min_u = std::min(sec5.min_u, st.record.u_min);
    for (int i = 0; i < 3; ++i)
      sec5.max_mass_drift =
          std::max(sec5.max_mass_drift,
                   std::abs(st.record.masses[i] - sec5.mass0[i]) / std::abs(sec5.mass0[i]));
    if (have_prev) {
      const double band = 1.0 + std::abs(prev_h);
      sec5.worst_entropy_slack =
          std::max(sec5.worst_entropy_slack, (st.record.h_br - prev_h) / band);
      const double strengthened =
          (st.record.h_br + cfg.run.dt * st.record.production - prev_h) / band;
      sec5.worst_strengthened_slack = std::max(sec5.worst_strengthened_slack, strengthened);
      if (strengthened > 1e-8) ++sec5.strengthened_logged;
    }
    prev_h = st.record.h_br;
    have_prev = true;
  };
  RunConfig rc = cfg.run;
  const LaplaceOperator op = assemble_laplacian(sec5.grid);
  const CellField phi_d = harmonic_extension(op, sec5.grid.dirichlet_traces());
  const State init = initialize(model, sec5.grid, u0);
  prev_h = entropy_boltzmann_rao(model, sec5.grid, init, phi_d);
  have_prev = true;
  run(model, sec5.grid, rc, u0, sinks);
  sec5.ran = true;
}

}  // namespace

int main() {
  criterion("1. entropy-map battery", 5.0, []() -> std::string {
    std::mt19937_64 rng(1001);
    std::uniform_real_distribution<double> vd(-20.0, 20.0), ld(-3.0, 3.0);
    const double sigmas[3] = {0.1, 1.0, 5.0};
    double worst_roundtrip = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = 1 + static_cast<int>(rng() % 4);
      const ModelParams p(sigmas[rng() % 3], Eigen::VectorXd::Zero(n), random_steric(rng, n));
      Eigen::VectorXd v(n);
      for (int i = 0; i < n; ++i) v[i] = vd(rng);
      const Eigen::VectorXd u = invert_chemical_potential(p, v);
      if (!(u.minCoeff() > 0.0)) fail("inverse produced a nonpositive concentration");
      worst_roundtrip =
          std::max(worst_roundtrip, (chemical_potential(p, u) - v).lpNorm<Eigen::Infinity>());
    }
    if (!(worst_roundtrip <= 1e-10))
      fail("roundtrip residual " + std::to_string(worst_roundtrip));
    double worst_ip = 1e300;
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = 1 + static_cast<int>(rng() % 4);
      const ModelParams p(sigmas[rng() % 3], Eigen::VectorXd::Zero(n), random_steric(rng, n));
      Eigen::VectorXd u(n), v(n);
      for (int i = 0; i < n; ++i) {
        u[i] = std::exp(ld(rng));
        v[i] = std::exp(ld(rng));
      }
      if ((u - v).lpNorm<Eigen::Infinity>() == 0.0) continue;
      worst_ip = std::min(
          worst_ip, (u - v).dot(chemical_potential(p, u) - chemical_potential(p, v)));
    }
    if (!(worst_ip > 0.0)) fail("monotonicity inner product " + std::to_string(worst_ip));
    std::ostringstream msg;
    msg << "max roundtrip " << worst_roundtrip << ", min inner product " << worst_ip;
    return msg.str();
  });

  criterion("2. Poisson convergence", 10.0, []() -> std::string {
    std::ostringstream msg;
    msg << "ratios:";
    // one-dimensional: grounded ends, unit charge, solution x(1-x)/2
    {
      double prev = 0.0;
      for (int nx : {16, 32, 64}) {
        BoundarySpec bc;
        bc.left = {BoundaryCondition::dirichlet, 0.0};
        bc.right = {BoundaryCondition::dirichlet, 0.0};
        const Grid g = build_grid(1, nx, 1, 1.0, 1.0, bc);
        const CellField phi = solve_poisson_linear(
            assemble_laplacian(g), CellField::Ones(g.n_cells()), g.dirichlet_traces());
        double err = 0.0;
        for (int k = 0; k < g.n_cells(); ++k) {
          const double x = g.cell_center(k).x();
          err = std::max(err, std::abs(phi[k] - 0.5 * x * (1.0 - x)));
        }
        if (prev > 0.0) {
          const double ratio = prev / err;
          msg << ' ' << ratio;
          if (!(ratio >= 3.0 && ratio <= 5.0))
            fail("1D ratio " + std::to_string(ratio) + " outside [3,5]");
        }
        prev = err;
      }
    }
    // two-dimensional: mixed boundaries, x(1-x)/2 + x cos(pi y)/2
    {
      const auto exact = [](double x, double y) {
        return 0.5 * x * (1.0 - x) + 0.5 * x * std::cos(kPi * y);
      };
      double prev = 0.0;
      for (int nx : {8, 16, 32}) {
        BoundarySpec bc;
        bc.left = {BoundaryCondition::dirichlet, 0.0};
        bc.right = {BoundaryCondition::dirichlet, 0.0};
        const Grid g = build_grid(2, nx, nx, 1.0, 1.0, bc);
        CellField charge(g.n_cells());
        for (int k = 0; k < g.n_cells(); ++k) {
          const Eigen::Vector2d c = g.cell_center(k);
          charge[k] = 1.0 + 0.5 * kPi * kPi * c.x() * std::cos(kPi * c.y());
        }
        Eigen::VectorXd traces =
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.boundary_faces.size()));
        for (std::size_t i = 0; i < g.boundary_faces.size(); ++i) {
          const auto& f = g.boundary_faces[i];
          if (f.bc != BoundaryCondition::dirichlet) continue;
          traces[static_cast<Eigen::Index>(i)] =
              exact(f.side == Side::left ? 0.0 : g.lx, g.cell_center(f.cell).y());
        }
        const CellField phi = solve_poisson_linear(assemble_laplacian(g), charge, traces);
        double err = 0.0;
        for (int k = 0; k < g.n_cells(); ++k) {
          const Eigen::Vector2d c = g.cell_center(k);
          err = std::max(err, std::abs(phi[k] - exact(c.x(), c.y())));
        }
        if (prev > 0.0) {
          const double ratio = prev / err;
          msg << ' ' << ratio;
          if (!(ratio >= 3.0 && ratio <= 5.0))
            fail("2D ratio " + std::to_string(ratio) + " outside [3,5]");
        }
        prev = err;
      }
    }
    return msg.str();
  });

  criterion("3. structural conservation over the benchmark run", 120.0, []() -> std::string {
    if (!sec5.ran) run_sec5();
    if (!(sec5.min_u > 0.0)) fail("positivity lost: min u = " + std::to_string(sec5.min_u));
    if (!(sec5.max_mass_drift <= 1e-10))
      fail("relative mass drift " + std::to_string(sec5.max_mass_drift));
    std::ostringstream msg;
    msg << "380 steps, max relative mass drift " << sec5.max_mass_drift << ", min u "
        << sec5.min_u;
    return msg.str();
  });

  criterion("4. discrete entropy inequality", 0.0, []() -> std::string {
    if (!sec5.ran) run_sec5();
    if (!(sec5.worst_entropy_slack <= 1e-8))
      fail("benchmark entropy increased by " + std::to_string(sec5.worst_entropy_slack));
    if (!(sec5.worst_strengthened_slack <= 1e-6))
      fail("benchmark strengthened inequality violated by " +
           std::to_string(sec5.worst_strengthened_slack));

    // ten randomized pure-Neumann configurations
    std::mt19937_64 rng(4004);
    std::uniform_real_distribution<double> zd(0.5, 5.0), amp(0.1, 0.3), base(0.6, 1.2);
    double worst_plain = sec5.worst_entropy_slack;
    double worst_strong = sec5.worst_strengthened_slack;
    int logged = sec5.strengthened_logged;
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 2 + static_cast<int>(rng() % 2);
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z[i] = (rng() % 2 == 0 ? 1.0 : -1.0) * zd(rng);
      const ModelParams p(1.0, z, random_steric(rng, n));
      const Grid g = build_grid(1, 24, 1, 1.0, 1.0, BoundarySpec{});
      Eigen::MatrixXd u0(g.n_cells(), n);
      for (int i = 0; i < n; ++i) {
        const double b = base(rng), a = amp(rng);
        const int mode = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < g.n_cells(); ++k)
          u0(k, i) = b * (1.0 + a * std::cos(mode * kPi * g.cell_center(k).x()));
      }
      // balance the last species so the total charge integral vanishes
      double imb = 0.0;
      for (int i = 0; i + 1 < n; ++i) imb += z[i] * cell_integral(g, u0.col(i));
      const double target = -imb / z[n - 1];
      if (target <= 0.0) {
        z[n - 1] = -z[n - 1];
      }
      const double scale =
          std::abs(imb) / (std::abs(z[n - 1]) * cell_integral(g, u0.col(n - 1)));
      u0.col(n - 1) *= scale;
      const ModelParams p2(1.0, z, p.a());
      if (!(u0.minCoeff() > 0.0)) fail("randomized initial data lost positivity");

      RunConfig rc;
      rc.dt = 2e-4;
      rc.n_steps = 25;
      double prev_h = 0.0;
      bool have_prev = false;
      RunSinks sinks;
      sinks.on_step = [&](const StepStats& st) {
        if (have_prev) {
          const double band = 1.0 + std::abs(prev_h);
          worst_plain = std::max(worst_plain, (st.record.h_br - prev_h) / band);
          const double strong =
              (st.record.h_br + rc.dt * st.record.production - prev_h) / band;
          worst_strong = std::max(worst_strong, strong);
          if (strong > 1e-8) ++logged;
        }
        prev_h = st.record.h_br;
        have_prev = true;
      };
      const LaplaceOperator op = assemble_laplacian(g);
      const State init = initialize(p2, g, u0);
      prev_h = entropy_boltzmann_rao(p2, g, init, CellField::Zero(g.n_cells()));
      have_prev = true;
      run(p2, g, rc, u0, sinks);
    }
    if (!(worst_plain <= 1e-8)) fail("entropy increased by " + std::to_string(worst_plain));
    if (!(worst_strong <= 1e-6))
      fail("strengthened inequality violated by " + std::to_string(worst_strong));
    std::ostringstream msg;
    msg << "worst normalized slack: plain " << worst_plain << ", with production "
        << worst_strong << " (" << logged << " step(s) logged beyond 1e-8)";
    return msg.str();
  });

  criterion("5. exponential decay", 30.0, []() -> std::string {
    const ExperimentConfig cfg = preset_decay_1d();
    const ModelParams p = make_model(cfg);
    const Grid g = make_grid(cfg);
    const Eigen::MatrixXd u0 = make_initial_data(cfg, g);
    std::vector<std::pair<double, double>> series;
    RunSinks sinks;
    sinks.record = [&](const DiagnosticsRecord& r) {
      series.emplace_back(r.time, r.h_rel_br.value());
    };
    run(p, g, cfg.run, u0, sinks);
    for (std::size_t k = 1; k < series.size(); ++k)
      if (series[k - 1].second > 1e-12 && !(series[k].second < series[k - 1].second))
        fail("relative entropy not strictly decreasing at t=" +
             std::to_string(series[k].first));
    const auto [t_lo, t_hi] = default_fit_window(series);
    const DecayFit fit = fit_decay(series, t_lo, t_hi);
    const DecayTheory theory = decay_theory_constant(p, g);
    if (!(fit.rate > 0.0)) fail("fitted rate " + std::to_string(fit.rate));
    if (!(fit.r_squared >= 0.99)) fail("fit r^2 " + std::to_string(fit.r_squared));
    const double reduction = series.front().second / series.back().second;
    if (!(reduction >= 10.0)) fail("decay factor " + std::to_string(reduction));
    std::ostringstream msg;
    msg << "lambda_fit " << fit.rate << ", r^2 " << fit.r_squared << ", reduction "
        << reduction << "x, lambda_theory " << theory.rate << " (informative)";
    return msg.str();
  });

  criterion("6. coarse-versus-reference refinement probe", 60.0, []() -> std::string {
    const ExperimentConfig base = preset_wsu_1d();
    std::ostringstream out;
    const int rc = cmd_wsu(base, 3, out, out);
    if (rc != kExitOk) fail("probe failed:\n" + out.str());
    // extract the per-level numbers for the report
    std::string line, last;
    std::istringstream in(out.str());
    std::ostringstream msg;
    while (std::getline(in, line))
      if (line.find("max_H_R=") != std::string::npos)
        msg << line.substr(line.find("nx=")) << "; ";
      else if (line.find("last_over_first") != std::string::npos)
        last = line.substr(line.find("last_over_first"));
    msg << last;
    return msg.str();
  });

  criterion("7. algebraic identities", 5.0, []() -> std::string {
    std::mt19937_64 rng(7007);
    std::uniform_real_distribution<double> ld(-2.0, 2.0), gd(-3.0, 3.0), zd(-3.0, 3.0),
        ud(0.2, 2.0), pd(-0.5, 0.5);
    double worst_split = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = 1 + static_cast<int>(rng() % 3);
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z[i] = zd(rng);
      const ModelParams p(std::exp(0.5 * ld(rng)), z, random_steric(rng, n));
      Eigen::VectorXd u(n), gphi(2);
      Eigen::MatrixXd gu(n, 2);
      for (int i = 0; i < n; ++i) {
        u[i] = std::exp(ld(rng));
        gu(i, 0) = gd(rng);
        gu(i, 1) = gd(rng);
      }
      gphi << gd(rng), gd(rng);
      const ProductionSplit s = production_decomposition(p, u, gu, gphi);
      worst_split = std::max(
          worst_split, std::abs(s.total - s.component_sum()) / (1.0 + std::abs(s.total)));
    }
    if (!(worst_split <= 1e-12)) fail("decomposition gap " + std::to_string(worst_split));

    // quadratic route versus Bregman route on Poisson-consistent pairs
    BoundarySpec bc;
    bc.left = {BoundaryCondition::dirichlet, 0.1};
    bc.right = {BoundaryCondition::dirichlet, 0.1};
    const Grid g = build_grid(2, 5, 4, 1.0, 1.0, bc);
    const LaplaceOperator op = assemble_laplacian(g);
    const CellField phi_d = harmonic_extension(op, g.dirichlet_traces());
    Eigen::Matrix2d a;
    a << 1.2, 0.4, 0.4, 1.0;
    const ModelParams pm(1.0, Eigen::Vector2d(2.0, -1.0), a);
    const auto random_state = [&]() {
      State s;
      s.u.resize(g.n_cells(), 2);
      for (int k = 0; k < g.n_cells(); ++k) {
        s.u(k, 0) = ud(rng);
        s.u(k, 1) = ud(rng);
      }
      s.phi = solve_poisson_linear(op, total_charge(pm, s.u), g.dirichlet_traces());
      s.w = entropy_variables_field(pm, s.u, s.phi);
      return s;
    };
    double worst_pair = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const State s1 = random_state(), s2 = random_state();
      const double q = relative_entropy_rao(pm, g, s1, s2);
      const double b = relative_entropy_rao_bregman(pm, g, s1, s2, phi_d);
      worst_pair = std::max(worst_pair, std::abs(q - b) / (1.0 + std::abs(q)));
    }
    if (!(worst_pair <= 1e-12)) fail("quadratic-vs-Bregman gap " + std::to_string(worst_pair));

    // entropy difference identity
    double worst_diff = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      State s;
      s.u.resize(g.n_cells(), 2);
      for (int k = 0; k < g.n_cells(); ++k) {
        s.u(k, 0) = ud(rng);
        s.u(k, 1) = ud(rng);
      }
      s.phi = CellField::Zero(g.n_cells());
      for (int k = 0; k < g.n_cells(); ++k) s.phi[k] = pd(rng);
      s.w = entropy_variables_field(pm, s.u, s.phi);
      double boltz = 0.0;
      for (int k = 0; k < g.n_cells(); ++k)
        for (int i = 0; i < 2; ++i)
          boltz += g.cell_volume * pm.sigma() * (s.u(k, i) * std::log(s.u(k, i)) - s.u(k, i));
      const double diff =
          entropy_boltzmann_rao(pm, g, s, phi_d) - entropy_rao(pm, g, s, phi_d);
      worst_diff =
          std::max(worst_diff, std::abs(diff - boltz) / (1.0 + std::abs(boltz)));
    }
    if (!(worst_diff <= 1e-12)) fail("entropy difference gap " + std::to_string(worst_diff));
    std::ostringstream msg;
    msg << "gaps: decomposition " << worst_split << ", relative-entropy routes " << worst_pair
        << ", entropy difference " << worst_diff;
    return msg.str();
  });

  criterion("8. long-time benchmark profile gates", 0.0, []() -> std::string {
    if (!sec5.ran) run_sec5();
    const QualitativeGates q = qualitative_gates(sec5.grid, sec5.first, sec5.last);
    std::ostringstream msg;
    msg << "interior/global std ratios:";
    for (int i = 0; i < q.std_ratio.size(); ++i) msg << ' ' << q.std_ratio[i];
    msg << " (bound " << q.ratio_bound << "), potential drift " << q.phi_change << " (bound "
        << q.phi_change_bound << ")";
    if (!q.flat_interior) fail("interior flatness gate failed -- " + msg.str());
    if (!q.phi_stable) fail("potential stability gate failed -- " + msg.str());
    return msg.str();
  });

  int failures = 0;
  for (const auto& c : results)
    if (!c.ok) ++failures;
  std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failures,
              results.size());
  return failures == 0 ? 0 : 1;
}
