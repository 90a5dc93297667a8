// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/doppler_comp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ddtrack/array_geometry.hpp"

namespace ddtrack {
namespace {

// Mean of e^{j 2 pi df i} over i in [i0, i0 + count): a shifted Dirichlet
// kernel.  Near-integer df makes every term equal, so branch to avoid the
// 0/0 in the closed form.
cxd window_mean_tone(double df, double i0, int count) {
  const double arg = kPi * df;
  const double s = std::sin(arg);
  const cxd lead = std::exp(kJ * (2.0 * kPi * df * i0 + arg * (count - 1)));
  if (std::abs(s) * count < 1e-12) return std::exp(kJ * 2.0 * kPi * df * i0);
  return lead * (std::sin(arg * count) / (count * s));
}

}  // namespace

std::vector<int> select_dominant(const VectorXcd& x_hat, double frac, int cap) {
  if (frac <= 0.0 || frac > 1.0) throw std::invalid_argument("select_dominant: frac must be in (0, 1]");
  if (cap <= 0) throw std::invalid_argument("select_dominant: cap must be positive");
  const VectorXd energy = x_hat.cwiseAbs2();
  const double peak = energy.maxCoeff();
  std::vector<int> keep;
  if (peak <= 0.0) return keep;  // nothing to point a beam at
  const double floor = frac * peak;
  for (int k = 0; k < energy.size(); ++k) {
    if (energy[k] >= floor) keep.push_back(k);
  }
  std::stable_sort(keep.begin(), keep.end(),
                   [&](int a, int b) { return energy[a] > energy[b]; });
  if (static_cast<int>(keep.size()) > cap) keep.resize(cap);
  return keep;
}

CompensationPlan build_compensation(const AngularGrid& g, const PhiParams& phi_hat,
                                    const std::vector<int>& indices) {
  CompensationPlan plan;
  plan.indices = indices;
  plan.eta = phi_hat.eta;
  plan.fd = phi_hat.fd;
  plan.empty_selection = indices.empty();
  plan.angles.resize(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int n = indices[k];
    if (n < 0 || n >= g.n_tilde()) throw std::out_of_range("build_compensation: index off the grid");
    plan.angles[static_cast<Eigen::Index>(k)] = g.theta_r[n] + phi_hat.beta_r[n];
  }
  return plan;
}

MatrixXcd comp_beamformer(const CompensationPlan& plan, int n_rx) {
  MatrixXcd w(n_rx, plan.n_d());
  for (int k = 0; k < plan.n_d(); ++k) w.col(k) = steering(plan.angles[k], n_rx);
  return w;
}

VectorXcd comp_rotations(const CompensationPlan& plan, double sym_idx) {
  VectorXcd d(plan.n_d());
  for (int k = 0; k < plan.n_d(); ++k) {
    d[k] = std::exp(kJ * 2.0 * kPi * plan.fd * sym_idx * std::cos(plan.angles[k] + plan.eta));
  }
  return d;
}

MatrixXcd effective_channel(const MatrixXcd& h, const CompensationPlan& plan, double sym_idx,
                            int n_rx, bool apply_rotation) {
  if (h.rows() != n_rx) throw std::invalid_argument("effective_channel: channel row count mismatch");
  const MatrixXcd w = comp_beamformer(plan, n_rx);
  MatrixXcd out = w.adjoint() * h;
  if (apply_rotation) {
    const VectorXcd d = comp_rotations(plan, sym_idx);
    out = d.conjugate().asDiagonal() * out;
  }
  return out;
}

MatrixXcd mean_effective_channel(const FrameTruth& t, const ArrayShape& shape,
                                 const CompensationPlan& plan, double i_begin, int count,
                                 bool apply_rotation) {
  if (count <= 0) throw std::invalid_argument("mean_effective_channel: empty window");
  MatrixXcd out = MatrixXcd::Zero(plan.n_d(), shape.n_tx);
  for (int k = 0; k < plan.n_d(); ++k) {
    const VectorXcd w = steering(plan.angles[k], shape.n_rx);
    const double comp = apply_rotation ? plan.fd * std::cos(plan.angles[k] + plan.eta) : 0.0;
    for (int q = 0; q < t.n_paths(); ++q) {
      const cxd spatial = w.dot(steering(t.aoa[q], shape.n_rx));
      const double df = t.fd * std::cos(t.aoa[q] + t.eta) - comp;
      const cxd gain = t.alpha[q] * spatial * window_mean_tone(df, i_begin, count);
      out.row(k) += gain * steering(t.aod[q], shape.n_tx).adjoint();
    }
  }
  return out;
}

MatrixXcd ls_estimate_effective(const MatrixXcd& y1, const MatrixXcd& y2, const MatrixXcd& pilots) {
  if (y1.rows() != pilots.rows() || y2.rows() != pilots.rows() || y1.cols() != y2.cols()) {
    throw std::invalid_argument("ls_estimate_effective: dimension mismatch");
  }
  Eigen::ColPivHouseholderQR<MatrixXcd> qr(pilots);
  if (qr.rank() < pilots.cols()) throw std::invalid_argument("ls_estimate_effective: rank-deficient pilots");
  return 0.5 * (qr.solve(y1) + qr.solve(y2));
}

double achievable_rate(const MatrixXcd& h_eq, double snr_linear) {
  const Eigen::Index n_d = h_eq.rows();
  if (n_d == 0) return 0.0;
  const MatrixXcd gram = h_eq * h_eq.adjoint();
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(gram, Eigen::EigenvaluesOnly);
  double rate = 0.0;
  for (Eigen::Index k = 0; k < n_d; ++k) {
    rate += std::log2(1.0 + (snr_linear / static_cast<double>(n_d)) * std::max(0.0, es.eigenvalues()[k]));
  }
  return rate;
}

}  // namespace ddtrack
