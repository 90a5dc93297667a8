// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ddtrack/channel_sim.hpp"

namespace ddtrack {

// Receive-side compensation: a beam per selected arrival direction plus a
// per-symbol phase rotor that undoes that direction's Doppler drift.
struct CompensationPlan {
  std::vector<int> indices;  // selected grid indices, energy-descending
  VectorXd angles;           // grid angle + estimated offset per selection
  double eta = 0.0;          // rotation estimate baked into the rotors
  double fd = 0.0;           // Doppler estimate, cycles per symbol
  bool empty_selection = false;

  int n_d() const { return static_cast<int>(indices.size()); }
};

// Indices whose energy |x[k]|^2 reaches frac * max, strongest first (ties by
// lower index), at most cap entries.  An all-zero input selects nothing.
std::vector<int> select_dominant(const VectorXcd& x_hat, double frac, int cap);

CompensationPlan build_compensation(const AngularGrid& g, const PhiParams& phi_hat,
                                    const std::vector<int>& indices);

// W: one unit-norm receive beam per selected direction (n_rx x n_d).
MatrixXcd comp_beamformer(const CompensationPlan& plan, int n_rx);

// Diagonal of the per-symbol rotor D_i.
VectorXcd comp_rotations(const CompensationPlan& plan, double sym_idx);

// Slow effective channel seen through the plan at one symbol:
// D_i^H W^H H_i (apply_rotation=false leaves the Doppler drift in).
MatrixXcd effective_channel(const MatrixXcd& h, const CompensationPlan& plan, double sym_idx,
                            int n_rx, bool apply_rotation = true);

// Time average of the compensated effective channel over the symbol window
// [i_begin, i_begin + count), evaluated in closed form via the path sum.
// This is the channel a receiver relying on one estimate for the whole
// window can actually use coherently.
MatrixXcd mean_effective_channel(const FrameTruth& t, const ArrayShape& shape,
                                 const CompensationPlan& plan, double i_begin, int count,
                                 bool apply_rotation = true);

// Least-squares effective-channel estimate from two uplink pilot sets
// (observations y = pilots * h_eff + noise), averaged.
MatrixXcd ls_estimate_effective(const MatrixXcd& y1, const MatrixXcd& y2, const MatrixXcd& pilots);

// Equal-power rate of an n_d-stream link over effective channel h_eq:
// log2 det(I + (snr / n_d) h_eq h_eq^H), n_d = rows of h_eq.
double achievable_rate(const MatrixXcd& h_eq, double snr_linear);

}  // namespace ddtrack
