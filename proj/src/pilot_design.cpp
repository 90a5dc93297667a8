// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/pilot_design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ddtrack {

PilotSchedule make_pilot_schedule(int n_p, int subframe_len) {
  if (n_p < 1) throw std::invalid_argument("need at least one pilot");
  if (subframe_len < n_p) throw std::invalid_argument("subframe shorter than pilot count");
  PilotSchedule s;
  s.n_p = n_p;
  s.subframe_len = subframe_len;
  s.indices.resize(n_p);
  for (int k = 0; k < n_p; ++k)
    s.indices[k] = static_cast<int>((static_cast<long long>(k) * subframe_len) / n_p);
  return s;
}

MatrixXcd dft_basis(int m) {
  if (m < 1) throw std::invalid_argument("basis size must be positive");
  MatrixXcd b(m, m);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  for (int k = 0; k < m; ++k)
    for (int l = 0; l < m; ++l)
      b(k, l) = scale * std::exp(-kJ * (2.0 * kPi * k * l / m));
  return b;
}

VectorXcd exploration_vector(const MatrixXcd& basis, Rng& rng) {
  const int m = static_cast<int>(basis.cols());
  std::uniform_real_distribution<double> u_phase(0.0, 2.0 * kPi);
  VectorXcd w(m);
  for (int k = 0; k < m; ++k) w[k] = std::exp(kJ * u_phase(rng)) / std::sqrt(static_cast<double>(m));
  return basis * w;
}

TrainingDesign design_training_vector(const MatrixXcd& h_eff, const MatrixXcd& basis, double mu,
                                      double rho, Rng& rng) {
  if (mu <= 0.0 || mu > 1.0) throw std::invalid_argument("mu must lie in (0, 1]");
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("rho must lie in [0, 1]");
  const int m = static_cast<int>(basis.cols());

  TrainingDesign out;
  if (h_eff.size() == 0 || h_eff.norm() == 0.0) {
    out.v = exploration_vector(basis, rng);
    out.pure_exploration = true;
    return out;
  }
  if (h_eff.cols() != m) throw std::invalid_argument("effective channel width must match basis");

  VectorXd energy(m);
  for (int k = 0; k < m; ++k) energy[k] = (h_eff * basis.col(k)).squaredNorm();
  const double total = energy.sum();

  // Greedy selection over energies sorted descending (ties by lower index)
  // gives the smallest set whose energy share reaches mu.
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return energy[a] > energy[b]; });
  double acc = 0.0;
  const double target = mu * total * (1.0 - 1e-12);
  for (int k = 0; k < m; ++k) {
    out.selected.push_back(order[k]);
    acc += energy[order[k]];
    if (acc >= target) break;
  }

  const int n_s = static_cast<int>(out.selected.size());
  std::vector<bool> in_sel(m, false);
  for (int k : out.selected) in_sel[k] = true;

  std::uniform_real_distribution<double> u_phase(0.0, 2.0 * kPi);
  VectorXcd w = VectorXcd::Zero(m);
  const double w_sel = (n_s == m) ? 1.0 / std::sqrt(static_cast<double>(n_s))
                                  : std::sqrt(rho) / std::sqrt(static_cast<double>(n_s));
  const double w_exp = (n_s == m) ? 0.0
                                  : std::sqrt(1.0 - rho) / std::sqrt(static_cast<double>(m - n_s));
  for (int k = 0; k < m; ++k)
    w[k] = std::exp(kJ * u_phase(rng)) * (in_sel[k] ? w_sel : w_exp);
  out.v = basis * w;
  return out;
}

Combiners make_combiners(int n_rx, int n_p, bool limited, int n_b, bool per_pilot, Rng& rng) {
  Combiners c;
  if (!limited) return c;
  if (n_b < 1 || n_b > n_rx) throw std::invalid_argument("combiner width must lie in [1, n_rx]");
  c.full_rf = false;
  c.n_b = n_b;
  const int draws = per_pilot ? n_p : 1;
  for (int k = 0; k < draws; ++k) {
    const MatrixXcd gauss = cnormal_matrix(rng, n_rx, n_b);
    Eigen::HouseholderQR<MatrixXcd> qr(gauss);
    MatrixXcd q = qr.householderQ() * MatrixXcd::Identity(n_rx, n_b);
    c.u.push_back(std::move(q));
  }
  if (!per_pilot)
    for (int k = 1; k < n_p; ++k) c.u.push_back(c.u.front());
  return c;
}

double noise_var_for_snr(const FrameTruth& t, const AngularGrid& g, const ArrayShape& shape,
                         const PilotSchedule& sched, double snr_db) {
  const MatrixXcd h = render_channel(t, g, shape, sched.indices.at(0));
  const double sig = h.squaredNorm() / (shape.n_tx * shape.n_rx);
  return sig / db_to_linear(snr_db);
}

Observation synthesize_observation(const FrameTruth& t, const AngularGrid& g,
                                   const ArrayShape& shape, const PilotSchedule& sched,
                                   const VectorXcd& v, const Combiners& comb, double noise_var,
                                   Rng& rng) {
  if (v.size() != shape.n_tx) throw std::invalid_argument("training vector length must be n_tx");
  if (!comb.full_rf && static_cast<int>(comb.u.size()) != sched.n_p)
    throw std::invalid_argument("one combiner per pilot required");
  if (noise_var < 0.0) throw std::invalid_argument("noise variance must be nonnegative");

  Observation obs;
  obs.noise_var = noise_var;
  obs.rows_per_pilot = comb.rows_per_pilot(shape.n_rx);
  obs.y.resize(static_cast<Eigen::Index>(obs.rows_per_pilot) * sched.n_p);
  const double sd = std::sqrt(noise_var);
  for (int k = 0; k < sched.n_p; ++k) {
    const MatrixXcd h = render_channel(t, g, shape, sched.indices[k]);
    VectorXcd r = h * v;
    if (sd > 0.0) r += sd * cnormal_vector(rng, shape.n_rx);
    obs.y.segment(static_cast<Eigen::Index>(k) * obs.rows_per_pilot, obs.rows_per_pilot) =
        comb.full_rf ? r : VectorXcd(comb.u[k].adjoint() * r);
  }
  return obs;
}

MatrixXcd assemble_f(const AngularGrid& g, const PhiParams& phi, const PilotSchedule& sched,
                     const Combiners& comb, int n_rx) {
  const int rows = comb.rows_per_pilot(n_rx);
  MatrixXcd f(static_cast<Eigen::Index>(rows) * sched.n_p, g.n_tilde());
  for (int k = 0; k < sched.n_p; ++k) {
    const MatrixXcd a = assemble_a_r(g, phi, sched.indices[k], n_rx);
    f.middleRows(static_cast<Eigen::Index>(k) * rows, rows) =
        comb.full_rf ? a : MatrixXcd(comb.u[k].adjoint() * a);
  }
  return f;
}

}  // namespace ddtrack
