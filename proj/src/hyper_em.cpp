// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/hyper_em.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ddtrack {

MatrixXd evidence_log_ratio(const MatrixXd& pi_post, const MatrixXd& pi_prior) {
  if (pi_post.rows() != pi_prior.rows() || pi_post.cols() != pi_prior.cols())
    throw std::invalid_argument("posterior/prior activity shapes disagree");
  const auto logit = [](double p) {
    const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(q) - std::log1p(-q);
  };
  MatrixXd lr(pi_post.rows(), pi_post.cols());
  for (Eigen::Index t = 0; t < pi_post.rows(); ++t)
    for (Eigen::Index k = 0; k < pi_post.cols(); ++k)
      lr(t, k) = logit(pi_post(t, k)) - logit(pi_prior(t, k));
  return lr;
}

ChainPosterior forward_backward(const MatrixXd& log_ratio, const MarkovParams& markov,
                                double lambda_init) {
  const Eigen::Index t_len = log_ratio.rows();
  const Eigen::Index n = log_ratio.cols();
  if (t_len < 1) throw std::invalid_argument("need at least one frame of evidence");
  if (lambda_init < 0.0 || lambda_init > 1.0)
    throw std::invalid_argument("initial activity must be a probability");

  ChainPosterior out;
  out.marginal.resize(t_len, n);
  out.pair11.resize(std::max<Eigen::Index>(t_len - 1, 0), n);

  const double p01 = markov.rho01, p10 = markov.rho10;

  for (Eigen::Index k = 0; k < n; ++k) {
    // Evidence values e_t(0), e_t(1) scaled so both stay bounded; the dropped
    // log factor is re-added to the likelihood to keep it exact.
    VectorXd e0(t_len), e1(t_len);
    double ll = 0.0;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      const double lr = log_ratio(t, k);
      const double m = std::max(lr, 0.0);
      e0[t] = std::exp(-m);
      e1[t] = std::exp(lr - m);
      ll += m;
    }

    // Scaled forward pass.
    MatrixXd alpha(t_len, 2);
    VectorXd scale(t_len);
    alpha(0, 0) = (1.0 - lambda_init) * e0[0];
    alpha(0, 1) = lambda_init * e1[0];
    scale[0] = alpha.row(0).sum();
    alpha.row(0) /= scale[0];
    for (Eigen::Index t = 1; t < t_len; ++t) {
      const double pred0 = alpha(t - 1, 0) * (1.0 - p01) + alpha(t - 1, 1) * p10;
      const double pred1 = alpha(t - 1, 0) * p01 + alpha(t - 1, 1) * (1.0 - p10);
      alpha(t, 0) = pred0 * e0[t];
      alpha(t, 1) = pred1 * e1[t];
      scale[t] = alpha.row(t).sum();
      alpha.row(t) /= scale[t];
    }
    for (Eigen::Index t = 0; t < t_len; ++t) ll += std::log(scale[t]);
    out.log_likelihood += ll;

    // Scaled backward pass and smoothed statistics.
    MatrixXd beta(t_len, 2);
    beta.row(t_len - 1).setOnes();
    for (Eigen::Index t = t_len - 2; t >= 0; --t) {
      const double b0 = (1.0 - p01) * e0[t + 1] * beta(t + 1, 0) + p01 * e1[t + 1] * beta(t + 1, 1);
      const double b1 = p10 * e0[t + 1] * beta(t + 1, 0) + (1.0 - p10) * e1[t + 1] * beta(t + 1, 1);
      const double s = b0 + b1;
      beta(t, 0) = b0 / s;
      beta(t, 1) = b1 / s;
    }

    for (Eigen::Index t = 0; t < t_len; ++t) {
      const double g0 = alpha(t, 0) * beta(t, 0);
      const double g1 = alpha(t, 1) * beta(t, 1);
      out.marginal(t, k) = g1 / (g0 + g1);
    }
    for (Eigen::Index t = 1; t < t_len; ++t) {
      const double x00 = alpha(t - 1, 0) * (1.0 - p01) * e0[t] * beta(t, 0);
      const double x01 = alpha(t - 1, 0) * p01 * e1[t] * beta(t, 1);
      const double x10 = alpha(t - 1, 1) * p10 * e0[t] * beta(t, 0);
      const double x11 = alpha(t - 1, 1) * (1.0 - p10) * e1[t] * beta(t, 1);
      const double s = x00 + x01 + x10 + x11;
      out.pair11(t - 1, k) = x11 / s;
    }
  }
  return out;
}

MarkovParams em_update_rho(const ChainPosterior& post, const MarkovParams& fallback) {
  const Eigen::Index t_len = post.marginal.rows();
  MarkovParams rho = fallback;
  if (t_len < 2) return rho;

  double from1 = 0.0, flips10 = 0.0, from0 = 0.0, flips01 = 0.0;
  for (Eigen::Index t = 1; t < t_len; ++t) {
    for (Eigen::Index k = 0; k < post.marginal.cols(); ++k) {
      const double prev1 = post.marginal(t - 1, k);
      const double both1 = post.pair11(t - 1, k);
      from1 += prev1;
      flips10 += prev1 - both1;               // 1 -> 0 transitions
      from0 += 1.0 - prev1;
      flips01 += post.marginal(t, k) - both1; // 0 -> 1 transitions
    }
  }
  if (from1 > 0.0) rho.rho10 = std::clamp(flips10 / from1, 0.0, 1.0);
  if (from0 > 0.0) rho.rho01 = std::clamp(flips01 / from0, 0.0, 1.0);
  return rho;
}

EmResult em_loop(const MatrixXd& log_ratio, const MarkovParams& init, int max_iters, double tol) {
  EmResult out;
  out.rho = init;
  if (log_ratio.rows() < 2) {
    out.degenerate = true;
    return out;
  }
  const double lambda_init = init.lambda();
  for (int it = 0; it < max_iters; ++it) {
    const ChainPosterior post = forward_backward(log_ratio, out.rho, lambda_init);
    out.loglik_trace.push_back(post.log_likelihood);
    const MarkovParams next = em_update_rho(post, out.rho);
    ++out.iters;
    const double step = std::max(std::abs(next.rho01 - out.rho.rho01),
                                 std::abs(next.rho10 - out.rho.rho10));
    out.rho = next;
    if (step < tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace ddtrack
