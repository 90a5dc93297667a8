// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/array_geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace ddtrack {

static VectorXd grid_sines(int k_total) {
  if (k_total < 1) throw std::invalid_argument("grid size must be positive");
  VectorXd s(k_total);
  const int anchor = (k_total - 1) / 2;
  for (int k = 0; k < k_total; ++k) s[k] = (2.0 / k_total) * (k - anchor);
  return s;
}

AngularGrid make_angular_grid(int m_tilde, int n_tilde) {
  AngularGrid g;
  g.sin_t = grid_sines(m_tilde);
  g.sin_r = grid_sines(n_tilde);
  g.theta_t = g.sin_t.array().asin();
  g.theta_r = g.sin_r.array().asin();
  return g;
}

VectorXcd steering(double theta, int m) {
  if (m < 1) throw std::invalid_argument("array size must be positive");
  VectorXcd a(m);
  const double s = std::sin(theta);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  for (int k = 0; k < m; ++k) a[k] = scale * std::exp(-kJ * (kPi * k * s));
  return a;
}

VectorXcd steering_derivative(double theta, int m) {
  VectorXcd a = steering(theta, m);
  const double c = std::cos(theta);
  for (int k = 0; k < m; ++k) a[k] *= -kJ * (kPi * k * c);
  return a;
}

VectorXcd steering_rx_doppler(double theta, double eta, double fd, double sym_idx, int n_rx) {
  const cxd rot = std::exp(kJ * (2.0 * kPi * fd * sym_idx * std::cos(theta + eta)));
  return steering(theta, n_rx) * rot;
}

MatrixXcd assemble_a_r(const AngularGrid& g, const PhiParams& phi, double sym_idx, int n_rx) {
  const int nt = g.n_tilde();
  if (phi.beta_r.size() != nt) throw std::invalid_argument("beta_r size does not match grid");
  MatrixXcd a(n_rx, nt);
  for (int k = 0; k < nt; ++k)
    a.col(k) = steering_rx_doppler(g.theta_r[k] + phi.beta_r[k], phi.eta, phi.fd, sym_idx, n_rx);
  return a;
}

static double half_spacing(const VectorXd& theta, int idx) {
  const int n = static_cast<int>(theta.size());
  if (idx < 0 || idx >= n) throw std::invalid_argument("grid index out of range");
  if (n == 1) return kPi / 2;
  double lo = (idx > 0) ? theta[idx] - theta[idx - 1] : theta[1] - theta[0];
  double hi = (idx + 1 < n) ? theta[idx + 1] - theta[idx] : theta[n - 1] - theta[n - 2];
  return 0.5 * std::min(lo, hi);
}

double half_spacing_r(const AngularGrid& g, int idx) { return half_spacing(g.theta_r, idx); }
double half_spacing_t(const AngularGrid& g, int idx) { return half_spacing(g.theta_t, idx); }

void clip_offsets_r(const AngularGrid& g, VectorXd& beta) {
  for (int k = 0; k < beta.size(); ++k) {
    const double h = half_spacing_r(g, k);
    beta[k] = std::clamp(beta[k], -h, h);
  }
}

int nearest_grid_index_r(const AngularGrid& g, double angle) {
  int best = 0;
  double best_d = std::abs(g.theta_r[0] - angle);
  for (int k = 1; k < g.n_tilde(); ++k) {
    const double d = std::abs(g.theta_r[k] - angle);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace ddtrack
