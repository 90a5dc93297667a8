// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/channel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ddtrack {

namespace {

int truncated_poisson(double mean, int lo, int hi, Rng& rng) {
  std::poisson_distribution<int> pois(mean);
  for (int attempt = 0; attempt < 256; ++attempt) {
    const int v = pois(rng);
    if (v >= lo && v <= hi) return v;
  }
  return std::clamp(static_cast<int>(std::lround(mean)), lo, hi);
}

// k distinct indices from {0..n-1}, ascending.
std::vector<int> distinct_indices(int k, int n, Rng& rng) {
  if (k > n) throw std::invalid_argument("more paths than grid points");
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<int> out;
  while (static_cast<int>(out.size()) < k) {
    const int c = pick(rng);
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double offset_in_cell(const AngularGrid& g, int idx, bool rx_side, Rng& rng) {
  const double h = rx_side ? half_spacing_r(g, idx) : half_spacing_t(g, idx);
  std::uniform_real_distribution<double> u(-h, h);
  return u(rng);
}

cxd draw_gain(int path_pos, double decay_db, Rng& rng) {
  const double var = std::pow(10.0, -path_pos * decay_db / 10.0);
  return cnormal(rng) * std::sqrt(var);
}

VectorXi support_from_indices(const std::vector<int>& idx, int n_tilde) {
  VectorXi s = VectorXi::Zero(n_tilde);
  for (int k : idx) s[k] = 1;
  return s;
}

}  // namespace

FrameTruth make_first_frame(const AngularGrid& g, const ChannelGenConfig& cfg, Rng& rng) {
  const int l = cfg.fixed_l ? cfg.l_fixed
                            : truncated_poisson(cfg.poisson_mean, 1, cfg.l_max, rng);
  if (l < 1 || l > g.n_tilde() || l > g.m_tilde())
    throw std::invalid_argument("path count incompatible with grid size");

  FrameTruth t;
  const auto rx_idx = distinct_indices(l, g.n_tilde(), rng);
  const auto tx_idx = distinct_indices(l, g.m_tilde(), rng);
  t.aoa_idx = Eigen::Map<const VectorXi>(rx_idx.data(), l);
  t.aod_idx = Eigen::Map<const VectorXi>(tx_idx.data(), l);
  t.alpha.resize(l);
  t.aoa.resize(l);
  t.aod.resize(l);
  for (int q = 0; q < l; ++q) {
    t.alpha[q] = draw_gain(q, cfg.alpha_decay_db, rng);
    t.aoa[q] = g.theta_r[t.aoa_idx[q]] + offset_in_cell(g, t.aoa_idx[q], true, rng);
    t.aod[q] = g.theta_t[t.aod_idx[q]] + offset_in_cell(g, t.aod_idx[q], false, rng);
  }
  t.support = support_from_indices(rx_idx, g.n_tilde());
  t.fd = cfg.fd;
  std::uniform_real_distribution<double> u_eta(0.0, 2.0 * kPi);
  t.eta = u_eta(rng);
  return t;
}

FrameTruth evolve_frame(const FrameTruth& prev, const AngularGrid& g, const MarkovParams& markov,
                        const ChannelGenConfig& cfg, Rng& rng, bool* forced_rebirth) {
  VectorXi s = evolve_support(prev.support, markov, rng);
  bool forced = false;
  if (s.sum() == 0) {
    std::uniform_int_distribution<int> pick(0, g.n_tilde() - 1);
    s[pick(rng)] = 1;
    forced = true;
  }
  if (forced_rebirth) *forced_rebirth = forced;

  // Map surviving paths by their receive-grid index.
  std::vector<int> prev_at(g.n_tilde(), -1);
  for (int q = 0; q < prev.n_paths(); ++q) prev_at[prev.aoa_idx[q]] = q;

  std::vector<int> rx_idx;
  for (int n = 0; n < g.n_tilde(); ++n)
    if (s[n]) rx_idx.push_back(n);
  const int l = static_cast<int>(rx_idx.size());

  // Transmit-grid indices: survivors keep theirs; newborns draw from the rest.
  std::vector<bool> tx_used(g.m_tilde(), false);
  std::vector<int> tx_idx(l, -1);
  for (int q = 0; q < l; ++q) {
    const int pq = prev_at[rx_idx[q]];
    if (pq >= 0) {
      tx_idx[q] = prev.aod_idx[pq];
      tx_used[tx_idx[q]] = true;
    }
  }
  std::uniform_int_distribution<int> pick_tx(0, g.m_tilde() - 1);
  for (int q = 0; q < l; ++q) {
    if (tx_idx[q] >= 0) continue;
    int c = pick_tx(rng);
    while (tx_used[c]) c = pick_tx(rng);
    tx_idx[q] = c;
    tx_used[c] = true;
  }

  FrameTruth t;
  t.aoa_idx = Eigen::Map<const VectorXi>(rx_idx.data(), l);
  t.aod_idx = Eigen::Map<const VectorXi>(tx_idx.data(), l);
  t.alpha.resize(l);
  t.aoa.resize(l);
  t.aod.resize(l);
  for (int q = 0; q < l; ++q) {
    t.alpha[q] = draw_gain(q, cfg.alpha_decay_db, rng);
    t.aoa[q] = g.theta_r[t.aoa_idx[q]] + offset_in_cell(g, t.aoa_idx[q], true, rng);
    t.aod[q] = g.theta_t[t.aod_idx[q]] + offset_in_cell(g, t.aod_idx[q], false, rng);
  }
  t.support = s;
  t.fd = prev.fd;
  if (cfg.drift_fd && cfg.fd_drift_std > 0.0) {
    std::normal_distribution<double> dn(0.0, cfg.fd_drift_std);
    t.fd = std::max(0.0, t.fd + dn(rng));
  }
  if (cfg.redraw_eta) {
    std::uniform_real_distribution<double> u_eta(0.0, 2.0 * kPi);
    t.eta = u_eta(rng);
  } else {
    t.eta = prev.eta;
  }
  return t;
}

MatrixXcd sparse_gain_matrix(const FrameTruth& t, const AngularGrid& g) {
  MatrixXcd x = MatrixXcd::Zero(g.n_tilde(), g.m_tilde());
  for (int q = 0; q < t.n_paths(); ++q) x(t.aoa_idx[q], t.aod_idx[q]) = t.alpha[q];
  return x;
}

VectorXd aod_offsets(const FrameTruth& t, const AngularGrid& g) {
  VectorXd beta = VectorXd::Zero(g.m_tilde());
  for (int q = 0; q < t.n_paths(); ++q) beta[t.aod_idx[q]] = t.aod[q] - g.theta_t[t.aod_idx[q]];
  return beta;
}

VectorXd aoa_offsets(const FrameTruth& t, const AngularGrid& g) {
  VectorXd beta = VectorXd::Zero(g.n_tilde());
  for (int q = 0; q < t.n_paths(); ++q) beta[t.aoa_idx[q]] = t.aoa[q] - g.theta_r[t.aoa_idx[q]];
  return beta;
}

MatrixXcd render_channel(const FrameTruth& t, const AngularGrid& g, const ArrayShape& shape,
                         double sym_idx) {
  // Compact product form: A_R,i(phi) * X_sparse * A_T(beta_T)^H over the full grids.
  PhiParams phi;
  phi.beta_r = aoa_offsets(t, g);
  phi.eta = t.eta;
  phi.fd = t.fd;
  const MatrixXcd a_r = assemble_a_r(g, phi, sym_idx, shape.n_rx);
  const MatrixXcd x_sparse = sparse_gain_matrix(t, g);
  const VectorXd beta_t = aod_offsets(t, g);
  MatrixXcd a_t(shape.n_tx, g.m_tilde());
  for (int m = 0; m < g.m_tilde(); ++m)
    a_t.col(m) = steering(g.theta_t[m] + beta_t[m], shape.n_tx);
  return a_r * (x_sparse * a_t.adjoint());
}

VectorXcd partial_coefficients(const FrameTruth& t, const AngularGrid& g, const VectorXcd& v) {
  VectorXcd x = VectorXcd::Zero(g.n_tilde());
  for (int q = 0; q < t.n_paths(); ++q) {
    const VectorXcd at = steering(t.aod[q], static_cast<int>(v.size()));
    x[t.aoa_idx[q]] += t.alpha[q] * at.dot(v);  // Eigen dot conjugates the left factor
  }
  return x;
}

}  // namespace ddtrack
