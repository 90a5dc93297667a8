// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ddtrack/array_geometry.hpp"
#include "ddtrack/sparsity_prior.hpp"

namespace ddtrack {

// Ground truth of one frame: a handful of paths, each tied to a distinct
// receive-grid point, plus the frame's Doppler shift and array rotation.
struct FrameTruth {
  VectorXcd alpha;   // per-path complex gains
  VectorXd aoa;      // per-path arrival angles (grid point + offset)
  VectorXd aod;      // per-path departure angles
  VectorXi aoa_idx;  // receive-grid index of each path (distinct, ascending)
  VectorXi aod_idx;  // transmit-grid index of each path (distinct)
  VectorXi support;  // length n_tilde, 1 exactly at the aoa_idx entries
  double fd = 0.0;   // Doppler shift, cycles per symbol
  double eta = 0.0;  // array rotation angle
  VectorXcd x_true;  // partial coefficients for a chosen training vector
                     // (filled by the caller once the vector is known)

  int n_paths() const { return static_cast<int>(alpha.size()); }
};

struct ChannelGenConfig {
  bool fixed_l = false;     // fixed path count instead of the Poisson draw
  int l_fixed = 3;
  double poisson_mean = 3;  // truncated to [1, l_max]
  int l_max = 6;
  double fd = 2e-4;         // cycles per symbol
  double alpha_decay_db = 0.0;  // per-path power decay of the gain profile
  bool redraw_eta = true;       // new rotation angle each frame
  bool drift_fd = false;        // random-walk Doppler across frames
  double fd_drift_std = 0.0;
};

// Fresh frame: path count, distinct grid indices on both sides, in-cell
// offsets, gains, eta ~ U[0, 2pi), fd from the config.
FrameTruth make_first_frame(const AngularGrid& g, const ChannelGenConfig& cfg, Rng& rng);

// Markov step of the support; survivors keep their grid indices with
// re-perturbed offsets and fresh gains, newborn paths draw everything.
// An all-dead support forces a single rebirth (flagged via forced_rebirth).
FrameTruth evolve_frame(const FrameTruth& prev, const AngularGrid& g, const MarkovParams& markov,
                        const ChannelGenConfig& cfg, Rng& rng, bool* forced_rebirth = nullptr);

// Per-path sparse gain matrix (n_tilde x m_tilde) with alpha_q at
// (aoa_idx_q, aod_idx_q).
MatrixXcd sparse_gain_matrix(const FrameTruth& t, const AngularGrid& g);

// Transmit-side offset vector implied by the truth: aod - theta_t at the
// path's grid point, zero elsewhere.
VectorXd aod_offsets(const FrameTruth& t, const AngularGrid& g);

// Receive-side offset vector implied by the truth (the solver's target).
VectorXd aoa_offsets(const FrameTruth& t, const AngularGrid& g);

// Full n_rx x n_tx channel matrix at symbol index i of the frame.
MatrixXcd render_channel(const FrameTruth& t, const AngularGrid& g, const ArrayShape& shape,
                         double sym_idx);

// Partial angular coefficients seen through training vector v:
// x[n] = sum_q 1{aoa_idx_q = n} alpha_q * a(aod_q)^H v,
// so that H_i v = A_R,i(phi_true) x for every symbol i.
VectorXcd partial_coefficients(const FrameTruth& t, const AngularGrid& g, const VectorXcd& v);

}  // namespace ddtrack
