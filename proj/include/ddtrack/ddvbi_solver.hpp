// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ddtrack/pilot_design.hpp"

namespace ddtrack {

struct SolverConfig {
  int max_outer_iters = 50;
  int max_estep_sweeps = 30;
  double elbo_tol = 1e-6;      // relative free-energy change
  double phi_tol = 1e-6;       // scaled parameter step
  double armijo_step0 = 1e-2;
  double armijo_shrink = 0.5;
  double armijo_c = 1e-4;
  int armijo_max_backtracks = 30;
  // Trial-step growth after a backtrack-free acceptance (1 disables and the
  // trial step restarts from armijo_step0 every iteration).  Growth removes
  // the slow constant-step tail when a clean scenario needs sub-permille
  // parameter precision, but it lets the ascent overshoot between factor
  // sweeps on noisy multipath frames, so tracking keeps it off.
  double armijo_grow = 1.0;
  int mstep_steps_per_outer = 1;
  double pi_clamp = 1e-3;      // outgoing support message clamp
  bool estimate_beta = true;
  bool estimate_eta = true;
  bool estimate_fd = true;
  // Admissible Doppler range, cycles/symbol.  Pilots sampled every D symbols
  // cannot distinguish tone frequencies that differ by 1/D, so scanning past
  // 1/(2 D) proposes aliases that fit the pilots exactly as well as the true
  // shift; the default stays inside that band for schedules of 6+ pilots per
  // 12500-symbol subframe.  Raise it only together with a denser schedule.
  double fd_max = 2.4e-4;
  // Scan grids must keep the per-path tone error fd * |d cos| below about
  // half a cycle across the pilot span, or no candidate starts coherent and
  // the probe ranking below is meaningless.
  int fd_scan_points = 41;     // coarse first-frame initializer (0 disables)
  int eta_scan_points = 24;    // rotation rescan (0 disables)
  bool rescan_eta_every_frame = true;
  // The matched-filter scan score is ambiguous when several (fd, eta) pairs
  // reproduce the active tones, so the top-scoring basins are each probed
  // with a few factor sweeps and ranked by free energy instead.
  int scan_top_k = 4;
  int scan_probe_sweeps = 6;
  double sigma_reg = 1e-10;    // fallback ridge when the precision matrix is singular
  double woodbury_cond_limit = 1e12;
  // Reported-coefficient folding threshold (>= 1 disables); see
  // fold_collinear_coefficients.
  double fold_coherence = 0.95;
  enum class XRoute { kAuto, kDirect, kWoodbury };
  XRoute x_route = XRoute::kAuto;
};

// Incoming per-index activity probabilities (the temporal prior).
struct SupportMessage {
  VectorXd pi_tilde;

  static SupportMessage stationary(const MarkovParams& markov, int n) {
    SupportMessage m;
    m.pi_tilde = VectorXd::Constant(n, markov.lambda());
    return m;
  }
};

// One-step Markov prediction of the posterior activity, clamped away from
// the degenerate endpoints so later frames can always revise it.
SupportMessage propagate_message(const VectorXd& pi_post, const MarkovParams& markov,
                                 double clamp_eps);

// Variational posterior: q(x) = CN(mu, sigma), q(gamma_n) = Gamma(a_gamma_n,
// b_gamma_n), q(s_n) = Bernoulli(pi_n), q(kappa) = Gamma(a_kappa, b_kappa).
struct PosteriorState {
  VectorXcd mu;
  MatrixXcd sigma;
  VectorXd a_gamma, b_gamma;
  VectorXd pi;
  double a_kappa = 0.0, b_kappa = 0.0;
  bool sigma_regularized = false;
  bool used_woodbury = false;

  VectorXd mean_gamma() const { return a_gamma.array() / b_gamma.array(); }
  double mean_kappa() const { return a_kappa / b_kappa; }
};

// Measurement-side quantities reused by every factor update at fixed phi.
struct MeasurementCache {
  MatrixXcd f;      // stacked observation operator, rows x n_tilde
  MatrixXcd gram;   // F^H F
  VectorXcd fh_y;   // F^H y
  double y_norm2 = 0.0;
  Eigen::Index rows = 0;
};

MeasurementCache make_measurement_cache(MatrixXcd f, const VectorXcd& y);

// <||y - F x||^2> under q(x).
double expected_residual(const PosteriorState& st, const MeasurementCache& mc);

PosteriorState init_frame(const SupportMessage& msg, const MeasurementCache& mc,
                          const GammaHyper& hyper, double sigma_reg);

void update_kappa(PosteriorState& st, const MeasurementCache& mc, const GammaHyper& hyper);
void update_x(PosteriorState& st, const MeasurementCache& mc, const SolverConfig& cfg);
void update_gamma(PosteriorState& st, const GammaHyper& hyper);
void update_s(PosteriorState& st, const SupportMessage& msg, const GammaHyper& hyper);

// Variational free energy (negative evidence bound) of the current state
// against the frame's surrogate joint; every factor update above is its exact
// block-coordinate minimizer, so sweeps never increase it.
double free_energy(const PosteriorState& st, const SupportMessage& msg,
                   const MeasurementCache& mc, const GammaHyper& hyper);

// Parameter-dependent part of the expected log joint:
// -<kappa> (||y - F(phi) mu||^2 + tr(F(phi) Sigma F(phi)^H)).
double surrogate_objective(const PhiParams& phi, const PosteriorState& st, const VectorXcd& y,
                           const AngularGrid& g, const PilotSchedule& sched, const Combiners& comb,
                           int n_rx);

struct PhiGradient {
  VectorXd beta_r;
  double eta = 0.0;
  double fd = 0.0;
};

// Analytic gradient of surrogate_objective in (beta_r, eta, fd).
PhiGradient mstep_gradient(const PhiParams& phi, const PosteriorState& st, const VectorXcd& y,
                           const AngularGrid& g, const PilotSchedule& sched, const Combiners& comb,
                           int n_rx);

struct FrameDiagnostics {
  int outer_iters = 0;
  int total_sweeps = 0;
  int armijo_accepts = 0;
  int armijo_rejects = 0;
  bool converged = false;
  bool used_woodbury = false;
  bool sigma_regularized = false;
  std::vector<double> free_energy_trace;  // one entry per outer iteration
};

struct FrameResult {
  VectorXcd x_hat;
  PhiParams phi;
  PosteriorState state;
  SupportMessage msg_next;
  FrameDiagnostics diag;
};

// When the offset angles of two adjacent grid points collide, their steering
// columns become (nearly) identical and any split of one path's gain between
// the two coefficients synthesizes the same channel — including huge mutually
// canceling splits, which the fit cannot rule out.  Reported coefficients are
// therefore canonicalized: wherever adjacent nonzero entries sit on columns
// with |<a_k, a_{k+1}>| >= coherence_min, the weaker entry is projected onto
// the stronger column and merged into it.  The synthesized channel A_R x is
// unchanged to first order in the angle gap.
VectorXcd fold_collinear_coefficients(const AngularGrid& g, const PhiParams& phi, int n_rx,
                                      VectorXcd x, double coherence_min);

// Alternating inference: sweep the factor updates to convergence, then take
// one (configurable) accepted uphill step of the surrogate in phi, repeat.
class DdvbiSolver {
 public:
  DdvbiSolver(AngularGrid grid, ArrayShape shape, PilotSchedule sched, Combiners comb,
              GammaHyper hyper, MarkovParams markov, SolverConfig cfg);

  // first_frame enables the coarse Doppler scan; otherwise phi_init is
  // treated as a warm start from the previous frame.
  FrameResult run_frame(const VectorXcd& y, const SupportMessage& msg, const PhiParams& phi_init,
                        bool first_frame) const;

  MatrixXcd operator_f(const PhiParams& phi) const;

  const AngularGrid& grid() const { return grid_; }
  const SolverConfig& config() const { return cfg_; }
  const MarkovParams& markov() const { return markov_; }
  const GammaHyper& hyper() const { return hyper_; }
  const Combiners& combiners() const { return comb_; }
  const PilotSchedule& schedule() const { return sched_; }
  ArrayShape shape() const { return shape_; }

 private:
  std::vector<PhiParams> coarse_scan(const VectorXcd& y, const PhiParams& phi,
                                     bool first_frame) const;
  void run_estep(PosteriorState& st, const SupportMessage& msg, const MeasurementCache& mc,
                 double& fe, FrameDiagnostics& diag) const;

  AngularGrid grid_;
  ArrayShape shape_;
  PilotSchedule sched_;
  Combiners comb_;
  GammaHyper hyper_;
  MarkovParams markov_;
  SolverConfig cfg_;
};

}  // namespace ddtrack
