// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ddtrack/common.hpp"

namespace ddtrack {

// Antenna counts at the two ends of the link (receive side first).
struct ArrayShape {
  int n_rx = 0;  // user / receive array size N
  int n_tx = 0;  // base-station / transmit array size M
};

// Uniform linear arrays at half-wavelength spacing on both ends of the link.
// Angles are parameterized by their sine, which is the quantity the array
// response actually resolves; grids therefore live on [-pi/2, pi/2).
struct AngularGrid {
  VectorXd sin_t;    // transmit-side grid, sine domain
  VectorXd sin_r;    // receive-side grid, sine domain
  VectorXd theta_t;  // asin(sin_t)
  VectorXd theta_r;  // asin(sin_r)

  int m_tilde() const { return static_cast<int>(sin_t.size()); }
  int n_tilde() const { return static_cast<int>(sin_r.size()); }
};

// sin(theta[k]) = (2/K)(k - floor((K-1)/2)), k = 0..K-1.
AngularGrid make_angular_grid(int m_tilde, int n_tilde);

// Unit-norm steering vector of an m-element ULA: (1/sqrt(m)) e^{-j pi k sin(theta)}.
VectorXcd steering(double theta, int m);

// Element-wise derivative of steering() with respect to theta.
VectorXcd steering_derivative(double theta, int m);

// Receive steering carrying the per-symbol Doppler rotation of its direction:
// a(theta) * e^{j 2 pi fd i cos(theta + eta)}.  fd is normalized to cycles per
// symbol and i is the symbol index within the frame.
VectorXcd steering_rx_doppler(double theta, double eta, double fd, double sym_idx, int n_rx);

// Doppler/rotation/off-grid parameter block estimated by the solver.
struct PhiParams {
  VectorXd beta_r;  // per-grid-point AoA offsets, |beta_r[k]| <= half local spacing
  double eta = 0.0; // array rotation angle entering the Doppler projection
  double fd = 0.0;  // Doppler shift, cycles per symbol

  static PhiParams zeros(int n_tilde) {
    PhiParams p;
    p.beta_r = VectorXd::Zero(n_tilde);
    return p;
  }
};

// N x N_tilde matrix whose column k is steering_rx_doppler at grid point k
// offset by beta_r[k].
MatrixXcd assemble_a_r(const AngularGrid& g, const PhiParams& phi, double sym_idx, int n_rx);

// Half the local angular spacing around grid point idx (one-sided at the edges).
double half_spacing_r(const AngularGrid& g, int idx);
double half_spacing_t(const AngularGrid& g, int idx);

// Clamp each offset into [-half_spacing, +half_spacing] of its grid point.
void clip_offsets_r(const AngularGrid& g, VectorXd& beta);

// Grid point whose angle is closest to `angle` (receive side).
int nearest_grid_index_r(const AngularGrid& g, double angle);

}  // namespace ddtrack
