#pragma once

#include <Eigen/Dense>
#include <vector>

#include "pnps/grid.hpp"
#include "pnps/model.hpp"

namespace pnps {

enum class MobilityMean { arithmetic, upwind };

/// Face value of the mobility u in the flux u * dw: arithmetic mean of the two
/// cell values, or the value from the cell with the larger entropy variable.
inline double mobility_mean(double u_a, double u_b, double w_a, double w_b, MobilityMean kind) {
  if (kind == MobilityMean::arithmetic) return 0.5 * (u_a + u_b);
  return w_a >= w_b ? u_a : u_b;
}

struct RunConfig {
  double dt = 0.0;
  int n_steps = 0;
  double epsilon = 0.0;  // weight of the optional H1 regularization
  MobilityMean mobility = MobilityMean::arithmetic;
  int output_every = 1;
  std::vector<int> snapshot_steps;
  NewtonSettings newton;
  int max_sweeps = 50;         // outer decoupled sweeps per time step
  bool coupled_newton = false; // solve (w, phi) as one Newton system instead
};

// Snapshot of the discrete solution. u holds one column per species (all
// entries positive), w the matching entropy variables, phi the potential.
struct State {
  Eigen::MatrixXd u;
  CellField phi;
  Eigen::MatrixXd w;
  double time = 0.0;
  int step = 0;

  int n_species() const { return static_cast<int>(u.cols()); }
};

}  // namespace pnps
