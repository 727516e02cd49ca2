#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "pnps/commands.hpp"
#include "pnps/config.hpp"

namespace {

pnps::ExperimentConfig load(const std::string& config_path, const std::string& preset) {
  if (!config_path.empty()) return pnps::parse_config(config_path);
  return pnps::preset_by_name(preset);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-volume simulator for ion transport with steric cross-diffusion"};
  app.require_subcommand(1);

  std::string config_path, preset, outdir = "out";
  bool vtk = false;
  int refinements = 3;

  auto* simulate = app.add_subcommand("simulate", "run a simulation and write CSV outputs");
  simulate->add_option("--config", config_path, "configuration file");
  simulate->add_option("--preset", preset, "named preset configuration");
  simulate->add_option("--out", outdir, "output directory (default: out)");
  simulate->add_flag("--vtk", vtk, "also write legacy VTK snapshots");

  auto* decay = app.add_subcommand("decay", "relaxation-to-equilibrium experiment with rate fit");
  decay->add_option("--config", config_path, "configuration file");
  decay->add_option("--preset", preset, "named preset configuration");

  auto* wsu = app.add_subcommand("wsu", "coarse-versus-reference refinement probe");
  wsu->add_option("--config", config_path, "configuration file");
  wsu->add_option("--preset", preset, "named preset configuration");
  wsu->add_option("--refinements", refinements, "number of dyadic refinements (default: 3)");

  auto* selfcheck = app.add_subcommand("selfcheck", "run the built-in invariant batteries");
  auto* presets = app.add_subcommand("presets", "list the named presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (presets->parsed()) {
      for (const auto& name : pnps::preset_names()) std::cout << name << '\n';
      return pnps::kExitOk;
    }
    if (selfcheck->parsed()) return pnps::cmd_selfcheck(std::cout);
    if (config_path.empty() && preset.empty()) {
      std::cerr << "config error: provide --config FILE or --preset NAME\n";
      return pnps::kExitConfig;
    }
    if (!config_path.empty() && !preset.empty()) {
      std::cerr << "config error: --config and --preset are mutually exclusive\n";
      return pnps::kExitConfig;
    }
    const pnps::ExperimentConfig config = load(config_path, preset);
    if (simulate->parsed()) return pnps::cmd_simulate(config, outdir, vtk);
    if (decay->parsed()) return pnps::cmd_decay(config);
    if (wsu->parsed()) return pnps::cmd_wsu(config, refinements);
  } catch (const pnps::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return pnps::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pnps::kExitSolver;
  }
  return pnps::kExitConfig;
}
