// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ddtrack/channel_sim.hpp"

namespace ddtrack {

// Downlink pilot symbol positions, uniformly spread over the subframe:
// indices[k] = floor(k * subframe_len / n_p).
struct PilotSchedule {
  int n_p = 0;
  int subframe_len = 0;
  std::vector<int> indices;
};

PilotSchedule make_pilot_schedule(int n_p, int subframe_len);

// Unitary m x m DFT matrix, B(k, l) = exp(-j 2 pi k l / m) / sqrt(m).
MatrixXcd dft_basis(int m);

// Random-phase superposition of all basis columns at equal power (used when
// no effective-channel knowledge exists yet).
VectorXcd exploration_vector(const MatrixXcd& basis, Rng& rng);

struct TrainingDesign {
  VectorXcd v;                // unit-norm training vector
  std::vector<int> selected;  // exploitation set, by decreasing beam energy
  bool pure_exploration = false;
};

// Beam-energy split: rank basis columns by |h_eff b_m|^2, keep the smallest
// set reaching fraction mu of the total energy, and spend fraction rho of the
// transmit power on it (the rest explores the complement at equal power).
TrainingDesign design_training_vector(const MatrixXcd& h_eff, const MatrixXcd& basis, double mu,
                                      double rho, Rng& rng);

// Receive combining actually applied to each pilot symbol.  In full-RF mode
// every antenna is observed directly; in limited-RF mode each pilot sees the
// channel only through n_b random orthonormal combiner columns.
struct Combiners {
  bool full_rf = true;
  int n_b = 0;
  std::vector<MatrixXcd> u;  // one n_rx x n_b matrix per pilot (limited mode)

  int rows_per_pilot(int n_rx) const { return full_rf ? n_rx : n_b; }
};

// per_pilot=false reuses a single combiner matrix for the whole subframe.
Combiners make_combiners(int n_rx, int n_p, bool limited, int n_b, bool per_pilot, Rng& rng);

struct Observation {
  VectorXcd y;             // combined pilot observations, stacked over pilots
  double noise_var = 0.0;  // per-antenna complex noise variance used
  int rows_per_pilot = 0;
};

// Noise variance realizing a per-receive-antenna pilot SNR of snr_db against
// the isotropic-average received power E_v ||H v||^2 = ||H||_F^2 / n_tx
// (H evaluated at the first pilot symbol).
double noise_var_for_snr(const FrameTruth& t, const AngularGrid& g, const ArrayShape& shape,
                         const PilotSchedule& sched, double snr_db);

// y_k = U_k^H (H_{i_k} v + n_k), n_k ~ CN(0, noise_var I).
Observation synthesize_observation(const FrameTruth& t, const AngularGrid& g,
                                   const ArrayShape& shape, const PilotSchedule& sched,
                                   const VectorXcd& v, const Combiners& comb, double noise_var,
                                   Rng& rng);

// Stacked observation operator F(phi): rows of U_k^H A_R,i_k(phi) over pilots,
// so that a noiseless observation satisfies y = F(phi_true) x_true.
MatrixXcd assemble_f(const AngularGrid& g, const PhiParams& phi, const PilotSchedule& sched,
                     const Combiners& comb, int n_rx);

}  // namespace ddtrack
