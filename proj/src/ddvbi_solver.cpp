// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/ddvbi_solver.hpp"

#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ddtrack {

namespace {

double digamma(double x) { return boost::math::digamma(x); }

// Gamma-posterior expectations.
double mean_log_gamma(double shape, double rate) { return digamma(shape) - std::log(rate); }

double gamma_entropy(double shape, double rate) {
  return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * digamma(shape);
}

double bernoulli_entropy(double p) { return -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p)); }

// log det of a Hermitian positive definite matrix via Cholesky, with an
// eigenvalue fallback for matrices that are PD only up to roundoff.
double logdet_hpd(const MatrixXcd& m) {
  Eigen::LLT<MatrixXcd> llt(m);
  if (llt.info() == Eigen::Success) {
    double ld = 0.0;
    const auto& l = llt.matrixLLT();
    for (Eigen::Index k = 0; k < m.rows(); ++k) ld += std::log(std::real(l(k, k)));
    return 2.0 * ld;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(m);
  double ld = 0.0;
  for (Eigen::Index k = 0; k < m.rows(); ++k)
    ld += std::log(std::max(es.eigenvalues()[k], std::numeric_limits<double>::min()));
  return ld;
}

}  // namespace

SupportMessage propagate_message(const VectorXd& pi_post, const MarkovParams& markov,
                                 double clamp_eps) {
  SupportMessage m;
  m.pi_tilde.resize(pi_post.size());
  for (Eigen::Index k = 0; k < pi_post.size(); ++k) {
    const double p = (1.0 - pi_post[k]) * markov.rho01 + pi_post[k] * (1.0 - markov.rho10);
    m.pi_tilde[k] = std::clamp(p, clamp_eps, 1.0 - clamp_eps);
  }
  return m;
}

MeasurementCache make_measurement_cache(MatrixXcd f, const VectorXcd& y) {
  if (f.rows() != y.size()) throw std::invalid_argument("operator and observation rows disagree");
  MeasurementCache mc;
  mc.rows = f.rows();
  mc.gram.noalias() = f.adjoint() * f;
  mc.fh_y.noalias() = f.adjoint() * y;
  mc.y_norm2 = y.squaredNorm();
  mc.f = std::move(f);
  return mc;
}

double expected_residual(const PosteriorState& st, const MeasurementCache& mc) {
  const double fit = mc.y_norm2 - 2.0 * std::real(mc.fh_y.dot(st.mu)) +
                     std::real(st.mu.dot(mc.gram * st.mu));
  const double spread = std::real(mc.gram.cwiseProduct(st.sigma.transpose()).sum());
  return std::max(fit + spread, 0.0);
}

PosteriorState init_frame(const SupportMessage& msg, const MeasurementCache& mc,
                          const GammaHyper& hyper, double sigma_reg) {
  const Eigen::Index n = mc.gram.rows();
  if (msg.pi_tilde.size() != n) throw std::invalid_argument("message length must match grid");

  PosteriorState st;
  st.a_gamma.resize(n);
  st.b_gamma.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double p = msg.pi_tilde[k];
    st.a_gamma[k] = p * hyper.a + (1.0 - p) * hyper.a_bar;
    st.b_gamma[k] = p * hyper.b + (1.0 - p) * hyper.b_bar;
  }
  st.pi = msg.pi_tilde;
  st.a_kappa = hyper.a_kappa;
  st.b_kappa = hyper.b_kappa;

  MatrixXcd prec = mc.gram;
  prec.diagonal() += st.mean_gamma().cast<cxd>();
  Eigen::LLT<MatrixXcd> llt(prec);
  if (llt.info() != Eigen::Success) {
    prec.diagonal().array() += sigma_reg;
    llt.compute(prec);
    st.sigma_regularized = true;
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("initial precision matrix is not positive definite");
  }
  st.sigma = llt.solve(MatrixXcd::Identity(n, n));
  st.sigma = 0.5 * (st.sigma + st.sigma.adjoint()).eval();
  st.mu.noalias() = st.sigma * mc.fh_y;
  return st;
}

void update_kappa(PosteriorState& st, const MeasurementCache& mc, const GammaHyper& hyper) {
  st.a_kappa = hyper.a_kappa + static_cast<double>(mc.rows);
  st.b_kappa = hyper.b_kappa + expected_residual(st, mc);
}

void update_x(PosteriorState& st, const MeasurementCache& mc, const SolverConfig& cfg) {
  const Eigen::Index n = mc.gram.rows();
  const double kap = st.mean_kappa();
  const VectorXd gbar = st.mean_gamma();

  const bool woodbury_cheaper = mc.rows < n;
  bool use_woodbury = cfg.x_route == SolverConfig::XRoute::kWoodbury ||
                      (cfg.x_route == SolverConfig::XRoute::kAuto && woodbury_cheaper);

  if (use_woodbury) {
    // Sigma = R - kap R F^H (I + kap F R F^H)^{-1} F R with R = diag(1/gbar).
    const VectorXd r = gbar.cwiseInverse();
    const MatrixXcd fr = mc.f * r.asDiagonal();              // F R
    MatrixXcd core = kap * (fr * mc.f.adjoint());            // kap F R F^H
    core.diagonal().array() += 1.0;
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(core);
    const double emin = es.eigenvalues().minCoeff();
    const double emax = es.eigenvalues().maxCoeff();
    if (emin <= 0.0 || emax / emin > cfg.woodbury_cond_limit) {
      use_woodbury = false;  // ill-conditioned core: fall back to the direct route
    } else {
      const MatrixXcd core_inv_fr =
          es.eigenvectors() *
          es.eigenvalues().cwiseInverse().asDiagonal() *
          (es.eigenvectors().adjoint() * fr);
      st.sigma = MatrixXcd(r.cast<cxd>().asDiagonal());
      st.sigma.noalias() -= kap * fr.adjoint() * core_inv_fr;
      st.used_woodbury = true;
    }
  }

  if (!use_woodbury) {
    MatrixXcd prec = kap * mc.gram;
    prec.diagonal() += gbar.cast<cxd>();
    Eigen::LLT<MatrixXcd> llt(prec);
    if (llt.info() != Eigen::Success) {
      prec.diagonal().array() += cfg.sigma_reg;
      llt.compute(prec);
      st.sigma_regularized = true;
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("precision matrix is not positive definite");
    }
    st.sigma = llt.solve(MatrixXcd::Identity(n, n));
    st.used_woodbury = false;
  }

  st.sigma = 0.5 * (st.sigma + st.sigma.adjoint()).eval();
  st.mu.noalias() = kap * (st.sigma * mc.fh_y);
}

void update_gamma(PosteriorState& st, const GammaHyper& hyper) {
  for (Eigen::Index k = 0; k < st.pi.size(); ++k) {
    const double p = st.pi[k];
    const double x2 = std::norm(st.mu[k]) + std::real(st.sigma(k, k));
    st.a_gamma[k] = p * hyper.a + (1.0 - p) * hyper.a_bar + 1.0;
    st.b_gamma[k] = p * hyper.b + (1.0 - p) * hyper.b_bar + x2;
  }
}

void update_s(PosteriorState& st, const SupportMessage& msg, const GammaHyper& hyper) {
  for (Eigen::Index k = 0; k < st.pi.size(); ++k) {
    const double pt = msg.pi_tilde[k];
    if (pt <= 0.0) { st.pi[k] = 0.0; continue; }
    if (pt >= 1.0) { st.pi[k] = 1.0; continue; }
    const double mlg = mean_log_gamma(st.a_gamma[k], st.b_gamma[k]);
    const double mg = st.a_gamma[k] / st.b_gamma[k];
    const double lw1 = std::log(pt) + hyper.a * std::log(hyper.b) - std::lgamma(hyper.a) +
                       (hyper.a - 1.0) * mlg - hyper.b * mg;
    const double lw0 = std::log1p(-pt) + hyper.a_bar * std::log(hyper.b_bar) -
                       std::lgamma(hyper.a_bar) + (hyper.a_bar - 1.0) * mlg - hyper.b_bar * mg;
    // pi = exp(lw1) / (exp(lw1) + exp(lw0)), evaluated stably.
    const double d = lw0 - lw1;
    st.pi[k] = d > 0.0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
  }
}

double free_energy(const PosteriorState& st, const SupportMessage& msg,
                   const MeasurementCache& mc, const GammaHyper& hyper) {
  const Eigen::Index n = st.mu.size();
  const double d_rows = static_cast<double>(mc.rows);

  // E_q log q(v): negative entropies.
  double e_log_q = -(n * std::log(kPi * std::exp(1.0)) + logdet_hpd(st.sigma));
  for (Eigen::Index k = 0; k < n; ++k) e_log_q -= gamma_entropy(st.a_gamma[k], st.b_gamma[k]);
  for (Eigen::Index k = 0; k < n; ++k) e_log_q -= bernoulli_entropy(st.pi[k]);
  e_log_q -= gamma_entropy(st.a_kappa, st.b_kappa);

  // E_q log p(y, v): likelihood + hierarchy + temporal support prior.
  const double mean_kap = st.mean_kappa();
  const double mean_log_kap = mean_log_gamma(st.a_kappa, st.b_kappa);
  double e_log_p = -d_rows * std::log(kPi) + d_rows * mean_log_kap -
                   mean_kap * expected_residual(st, mc);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double mlg = mean_log_gamma(st.a_gamma[k], st.b_gamma[k]);
    const double mg = st.a_gamma[k] / st.b_gamma[k];
    const double x2 = std::norm(st.mu[k]) + std::real(st.sigma(k, k));
    e_log_p += -std::log(kPi) + mlg - mg * x2;
    const double p = st.pi[k];
    e_log_p += p * (hyper.a * std::log(hyper.b) - std::lgamma(hyper.a) +
                    (hyper.a - 1.0) * mlg - hyper.b * mg);
    e_log_p += (1.0 - p) * (hyper.a_bar * std::log(hyper.b_bar) - std::lgamma(hyper.a_bar) +
                            (hyper.a_bar - 1.0) * mlg - hyper.b_bar * mg);
    e_log_p += xlogy(p, msg.pi_tilde[k]) + xlogy(1.0 - p, 1.0 - msg.pi_tilde[k]);
  }
  e_log_p += hyper.a_kappa * std::log(hyper.b_kappa) - std::lgamma(hyper.a_kappa) +
             (hyper.a_kappa - 1.0) * mean_log_kap - hyper.b_kappa * mean_kap;

  return e_log_q - e_log_p;
}

double surrogate_objective(const PhiParams& phi, const PosteriorState& st, const VectorXcd& y,
                           const AngularGrid& g, const PilotSchedule& sched, const Combiners& comb,
                           int n_rx) {
  const MatrixXcd f = assemble_f(g, phi, sched, comb, n_rx);
  const VectorXcd resid = y - f * st.mu;
  const double spread = std::real((f * st.sigma).cwiseProduct(f.conjugate()).sum());
  return -st.mean_kappa() * (resid.squaredNorm() + spread);
}

namespace {

// Stacked derivative operators at phi.  d_beta holds column-n derivatives
// with respect to beta_r[n]; d_eta / d_fd are full-matrix derivatives.
struct OperatorDerivatives {
  MatrixXcd f, d_beta, d_eta, d_fd;
};

OperatorDerivatives build_derivatives(const PhiParams& phi, const AngularGrid& g,
                                      const PilotSchedule& sched, const Combiners& comb,
                                      int n_rx) {
  const int nt = g.n_tilde();
  const int rows = comb.rows_per_pilot(n_rx);
  OperatorDerivatives d;
  d.f.resize(static_cast<Eigen::Index>(rows) * sched.n_p, nt);
  d.d_beta.resizeLike(d.f);
  d.d_eta.resizeLike(d.f);
  d.d_fd.resizeLike(d.f);

  for (int k = 0; k < sched.n_p; ++k) {
    const double i_k = sched.indices[k];
    MatrixXcd a(n_rx, nt), a_beta(n_rx, nt), a_eta(n_rx, nt), a_fd(n_rx, nt);
    for (int c = 0; c < nt; ++c) {
      const double th = g.theta_r[c] + phi.beta_r[c];
      const double co = std::cos(th + phi.eta);
      const double si = std::sin(th + phi.eta);
      const cxd rot = std::exp(kJ * (2.0 * kPi * phi.fd * i_k * co));
      const VectorXcd base = steering(th, n_rx) * rot;
      a.col(c) = base;
      // Doppler phase derivative factors.
      const cxd w_fd = kJ * (2.0 * kPi * i_k * co);
      const cxd w_eta = -kJ * (2.0 * kPi * phi.fd * i_k * si);
      a_fd.col(c) = base * w_fd;
      a_eta.col(c) = base * w_eta;
      a_beta.col(c) = steering_derivative(th, n_rx) * rot + base * w_eta;
    }
    const auto put = [&](MatrixXcd& dst, const MatrixXcd& src) {
      dst.middleRows(static_cast<Eigen::Index>(k) * rows, rows) =
          comb.full_rf ? src : MatrixXcd(comb.u[k].adjoint() * src);
    };
    put(d.f, a);
    put(d.d_beta, a_beta);
    put(d.d_eta, a_eta);
    put(d.d_fd, a_fd);
  }
  return d;
}

}  // namespace

PhiGradient mstep_gradient(const PhiParams& phi, const PosteriorState& st, const VectorXcd& y,
                           const AngularGrid& g, const PilotSchedule& sched, const Combiners& comb,
                           int n_rx) {
  const OperatorDerivatives d = build_derivatives(phi, g, sched, comb, n_rx);
  const double kap = st.mean_kappa();
  const VectorXcd resid = y - d.f * st.mu;
  const MatrixXcd sig_fh = st.sigma * d.f.adjoint();  // Sigma F^H

  // d/dtheta of -kap (||y - F mu||^2 + tr(F Sigma F^H))
  //   = 2 kap Re( resid^H F' mu - tr(F' Sigma F^H) ).
  PhiGradient grad;
  grad.beta_r = VectorXd::Zero(g.n_tilde());

  // beta block: dF/dbeta_n only has column n, so batch all columns at once.
  {
    const MatrixXcd fh_db = d.f.adjoint() * d.d_beta;          // F^H dF, n x n
    const MatrixXcd t = st.sigma * fh_db;                      // Sigma F^H dF
    for (Eigen::Index k = 0; k < grad.beta_r.size(); ++k) {
      const cxd fit = (resid.adjoint() * d.d_beta.col(k))(0) * st.mu[k];
      grad.beta_r[k] = 2.0 * kap * std::real(fit - t(k, k));
    }
  }

  const auto dense_grad = [&](const MatrixXcd& fp) {
    const cxd fit = (resid.adjoint() * (fp * st.mu))(0);
    // tr(F' Sigma F^H) = sum_{k,m} F'_{km} (Sigma F^H)_{mk}
    const cxd spread = fp.cwiseProduct(sig_fh.transpose()).sum();
    return 2.0 * kap * std::real(fit - spread);
  };
  grad.eta = dense_grad(d.d_eta);
  grad.fd = dense_grad(d.d_fd);
  return grad;
}

VectorXcd fold_collinear_coefficients(const AngularGrid& g, const PhiParams& phi, int n_rx,
                                      VectorXcd x, double coherence_min) {
  if (coherence_min >= 1.0) return x;
  if (phi.beta_r.size() != x.size()) throw std::invalid_argument("beta_r/x length mismatch");
  for (Eigen::Index k = 0; k + 1 < x.size(); ++k) {
    if (x[k] == cxd(0.0, 0.0) || x[k + 1] == cxd(0.0, 0.0)) continue;
    const VectorXcd a = steering(g.theta_r[k] + phi.beta_r[k], n_rx);
    const VectorXcd b = steering(g.theta_r[k + 1] + phi.beta_r[k + 1], n_rx);
    const cxd overlap = a.dot(b);  // <a_k, a_{k+1}>, unit-norm columns
    if (std::abs(overlap) < coherence_min) continue;
    if (std::abs(x[k]) >= std::abs(x[k + 1])) {
      x[k] += overlap * x[k + 1];
      x[k + 1] = cxd(0.0, 0.0);
    } else {
      x[k + 1] += std::conj(overlap) * x[k];
      x[k] = cxd(0.0, 0.0);
    }
  }
  return x;
}

DdvbiSolver::DdvbiSolver(AngularGrid grid, ArrayShape shape, PilotSchedule sched, Combiners comb,
                         GammaHyper hyper, MarkovParams markov, SolverConfig cfg)
    : grid_(std::move(grid)),
      shape_(shape),
      sched_(std::move(sched)),
      comb_(std::move(comb)),
      hyper_(hyper),
      markov_(markov),
      cfg_(cfg) {
  if (!comb_.full_rf && static_cast<int>(comb_.u.size()) != sched_.n_p)
    throw std::invalid_argument("one combiner per pilot required");
}

MatrixXcd DdvbiSolver::operator_f(const PhiParams& phi) const {
  return assemble_f(grid_, phi, sched_, comb_, shape_.n_rx);
}

std::vector<PhiParams> DdvbiSolver::coarse_scan(const VectorXcd& y, const PhiParams& phi,
                                                bool first_frame) const {
  const bool scan_fd = first_frame && cfg_.estimate_fd && cfg_.fd_scan_points > 1;
  const bool scan_eta = cfg_.estimate_eta && cfg_.eta_scan_points > 1 &&
                        (first_frame || cfg_.rescan_eta_every_frame);
  if (!scan_fd && !scan_eta) return {phi};

  std::vector<double> fd_grid{phi.fd};
  if (scan_fd)
    for (int k = 0; k < cfg_.fd_scan_points; ++k)
      fd_grid.push_back(cfg_.fd_max * k / (cfg_.fd_scan_points - 1));
  std::vector<double> eta_grid{phi.eta};
  if (scan_eta)
    for (int k = 0; k < cfg_.eta_scan_points; ++k)
      eta_grid.push_back(2.0 * kPi * k / cfg_.eta_scan_points);

  // Matched-filter energy is a cheap, maximum-seeking proxy good enough to
  // land inside a basin that the gradient refinement then descends into.
  // Several (fd, eta) pairs can explain the same active tones, so the
  // best-scoring points of distinct basins are all kept as candidates.
  struct Scored {
    double score;
    double fd, eta;
  };
  std::vector<Scored> scored;
  scored.reserve(fd_grid.size() * eta_grid.size());
  for (double fd : fd_grid) {
    for (double eta : eta_grid) {
      PhiParams cand = phi;
      cand.fd = fd;
      cand.eta = eta;
      const MatrixXcd f = operator_f(cand);
      scored.push_back({(f.adjoint() * y).squaredNorm(), fd, eta});
    }
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Scored& a, const Scored& b) { return a.score > b.score; });

  const double fd_step =
      scan_fd ? cfg_.fd_max / (cfg_.fd_scan_points - 1) : std::numeric_limits<double>::infinity();
  const double eta_step =
      scan_eta ? 2.0 * kPi / cfg_.eta_scan_points : std::numeric_limits<double>::infinity();
  const auto eta_dist = [](double a, double b) {
    double d = std::abs(a - b);
    d = std::fmod(d, 2.0 * kPi);
    return std::min(d, 2.0 * kPi - d);
  };

  std::vector<PhiParams> out;
  const int want = std::max(1, cfg_.scan_top_k);
  for (const Scored& s : scored) {
    bool same_basin = false;
    for (const PhiParams& kept : out) {
      if (std::abs(s.fd - kept.fd) <= 1.5 * fd_step && eta_dist(s.eta, kept.eta) <= 1.5 * eta_step) {
        same_basin = true;
        break;
      }
    }
    if (same_basin) continue;
    PhiParams cand = phi;
    cand.fd = s.fd;
    cand.eta = s.eta;
    out.push_back(cand);
    if (static_cast<int>(out.size()) >= want) break;
  }
  if (out.empty()) out.push_back(phi);
  return out;
}

void DdvbiSolver::run_estep(PosteriorState& st, const SupportMessage& msg,
                            const MeasurementCache& mc, double& fe,
                            FrameDiagnostics& diag) const {
  for (int sweep = 0; sweep < cfg_.max_estep_sweeps; ++sweep) {
    update_kappa(st, mc, hyper_);
    update_x(st, mc, cfg_);
    update_gamma(st, hyper_);
    update_s(st, msg, hyper_);
    ++diag.total_sweeps;
    const double fe_new = free_energy(st, msg, mc, hyper_);
    const bool done = std::abs(fe_new - fe) <= cfg_.elbo_tol * (1.0 + std::abs(fe_new));
    fe = fe_new;
    if (done) break;
  }
  diag.used_woodbury = diag.used_woodbury || st.used_woodbury;
  diag.sigma_regularized = diag.sigma_regularized || st.sigma_regularized;
}

FrameResult DdvbiSolver::run_frame(const VectorXcd& y, const SupportMessage& msg,
                                   const PhiParams& phi_init, bool first_frame) const {
  if (msg.pi_tilde.size() != grid_.n_tilde())
    throw std::invalid_argument("message length must match grid");
  PhiParams phi = phi_init;
  if (phi.beta_r.size() != grid_.n_tilde())
    throw std::invalid_argument("beta_r length must match grid");
  clip_offsets_r(grid_, phi.beta_r);
  phi.fd = std::clamp(phi.fd, 0.0, cfg_.fd_max);

  const std::vector<PhiParams> candidates = coarse_scan(y, phi, first_frame);

  FrameResult out;
  phi = candidates.front();
  MeasurementCache mc = make_measurement_cache(operator_f(phi), y);
  PosteriorState st = init_frame(msg, mc, hyper_, cfg_.sigma_reg);
  double fe = free_energy(st, msg, mc, hyper_);
  if (candidates.size() > 1) {
    // Rank the scan candidates by the model's own criterion: a few factor
    // sweeps each, keep the basin with the lowest free energy.
    const int probe = std::max(1, cfg_.scan_probe_sweeps);
    bool have_best = false;
    PhiParams best_phi;
    MeasurementCache best_mc;
    PosteriorState best_st;
    double best_fe = std::numeric_limits<double>::infinity();
    for (const PhiParams& cand : candidates) {
      MeasurementCache mc_c = make_measurement_cache(operator_f(cand), y);
      PosteriorState st_c = init_frame(msg, mc_c, hyper_, cfg_.sigma_reg);
      for (int sweep = 0; sweep < probe; ++sweep) {
        update_kappa(st_c, mc_c, hyper_);
        update_x(st_c, mc_c, cfg_);
        update_gamma(st_c, hyper_);
        update_s(st_c, msg, hyper_);
        ++out.diag.total_sweeps;
      }
      const double fe_c = free_energy(st_c, msg, mc_c, hyper_);
      if (!have_best || fe_c < best_fe) {
        have_best = true;
        best_fe = fe_c;
        best_phi = cand;
        best_mc = std::move(mc_c);
        best_st = std::move(st_c);
      }
    }
    phi = best_phi;
    mc = std::move(best_mc);
    st = std::move(best_st);
    fe = best_fe;
  }

  const bool any_phi = cfg_.estimate_beta || cfg_.estimate_eta || cfg_.estimate_fd;
  const double i_ref = std::max(1.0, static_cast<double>(sched_.indices.back()));
  const double s_beta = 2.0 / (kPi * std::max(1, shape_.n_rx - 1));
  const double s_fd = 1.0 / (2.0 * kPi * i_ref);
  // Trial step carried across iterations: doubled after a backtrack-free
  // acceptance, restarted from the accepted value otherwise.  A constant
  // restart leaves the ascent with steps proportional to the shrinking
  // gradient and a needlessly slow linear tail.
  double alpha0 = cfg_.armijo_step0;

  double fe_outer_prev = fe;
  for (int outer = 0; outer < cfg_.max_outer_iters; ++outer) {
    ++out.diag.outer_iters;
    run_estep(st, msg, mc, fe, out.diag);

    double phi_step = 0.0;
    if (any_phi) {
      // Offsets of currently-inactive grid points are pulled back to zero so
      // stale estimates cannot wander while their coefficient is off.
      if (cfg_.estimate_beta) {
        bool reset = false;
        for (Eigen::Index k = 0; k < phi.beta_r.size(); ++k)
          if (st.pi[k] < 0.5 && phi.beta_r[k] != 0.0) {
            phi.beta_r[k] = 0.0;
            reset = true;
          }
        if (reset) mc = make_measurement_cache(operator_f(phi), y);
      }

      for (int rep = 0; rep < cfg_.mstep_steps_per_outer; ++rep) {
        PhiGradient gr = mstep_gradient(phi, st, y, grid_, sched_, comb_, shape_.n_rx);
        if (!cfg_.estimate_beta) gr.beta_r.setZero();
        if (!cfg_.estimate_eta) gr.eta = 0.0;
        if (!cfg_.estimate_fd) gr.fd = 0.0;

        const double fd_ref = std::max({std::abs(phi.fd), 0.1 * cfg_.fd_max, 1e-12});
        const double s_eta = 1.0 / (2.0 * kPi * fd_ref * i_ref);
        const double decrease = s_beta * s_beta * gr.beta_r.squaredNorm() +
                                s_eta * s_eta * gr.eta * gr.eta + s_fd * s_fd * gr.fd * gr.fd;
        if (decrease <= 0.0) break;

        const double j0 = surrogate_objective(phi, st, y, grid_, sched_, comb_, shape_.n_rx);
        double alpha = alpha0;
        bool accepted = false;
        for (int bt = 0; bt <= cfg_.armijo_max_backtracks; ++bt) {
          PhiParams trial = phi;
          trial.beta_r += alpha * s_beta * s_beta * gr.beta_r;
          trial.eta += alpha * s_eta * s_eta * gr.eta;
          trial.fd += alpha * s_fd * s_fd * gr.fd;
          clip_offsets_r(grid_, trial.beta_r);
          trial.fd = std::clamp(trial.fd, 0.0, cfg_.fd_max);
          const double j1 = surrogate_objective(trial, st, y, grid_, sched_, comb_, shape_.n_rx);
          if (j1 >= j0 + cfg_.armijo_c * alpha * decrease) {
            phi_step = std::max({phi_step, (trial.beta_r - phi.beta_r).cwiseAbs().maxCoeff(),
                                 std::abs(trial.eta - phi.eta),
                                 std::abs(trial.fd - phi.fd) / s_fd});
            phi = trial;
            accepted = true;
            ++out.diag.armijo_accepts;
            if (cfg_.armijo_grow > 1.0)
              alpha0 = (bt == 0) ? std::min(cfg_.armijo_grow * alpha, 1e6 * cfg_.armijo_step0)
                                 : alpha;
            break;
          }
          ++out.diag.armijo_rejects;
          alpha *= cfg_.armijo_shrink;
        }
        if (!accepted) break;
        mc = make_measurement_cache(operator_f(phi), y);
      }
    }

    fe = free_energy(st, msg, mc, hyper_);
    out.diag.free_energy_trace.push_back(fe);
    const bool fe_done = std::abs(fe - fe_outer_prev) <= cfg_.elbo_tol * (1.0 + std::abs(fe));
    fe_outer_prev = fe;
    if (fe_done && phi_step < cfg_.phi_tol) {
      out.diag.converged = true;
      break;
    }
  }

  // Re-polish the coefficient posterior against the final operator.
  run_estep(st, msg, mc, fe, out.diag);
  out.diag.free_energy_trace.push_back(fe);

  out.x_hat = fold_collinear_coefficients(grid_, phi, shape_.n_rx, st.mu, cfg_.fold_coherence);
  out.phi = phi;
  out.msg_next = propagate_message(st.pi, markov_, cfg_.pi_clamp);
  out.state = std::move(st);
  return out;
}

}  // namespace ddtrack
