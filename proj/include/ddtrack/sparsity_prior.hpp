// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "ddtrack/common.hpp"

namespace ddtrack {

// Two-state Markov chain on each angular support bit: rho01 = P(0 -> 1),
// rho10 = P(1 -> 0).  lambda is the stationary activity probability.
struct MarkovParams {
  double rho01 = 0.01;
  double rho10 = 0.1;

  double lambda() const {
    const double s = rho01 + rho10;
    return s > 0.0 ? rho01 / s : 0.5;  // frozen chain: no stationary preference
  }
};

// Gamma hyperparameters of the precision layer.  (a, b) governs active
// coefficients, (a_bar, b_bar) inactive ones (mean precision a_bar/b_bar
// pushed very high so inactive coefficients collapse to zero), and
// (a_kappa, b_kappa) is the broad prior on the measurement noise precision.
struct GammaHyper {
  double a = 1.0;
  double b = 1.0;
  double a_bar = 1.0;
  double b_bar = 1e-6;
  double a_kappa = 1e-6;
  double b_kappa = 1e-6;
};

// log Gamma(x; shape, rate).  Throws std::domain_error for x <= 0.
double log_gamma_pdf(double x, double shape, double rate);

// log CN(x; 0, 1/gamma) for a scalar circularly-symmetric complex Gaussian.
double log_cn_pdf(cxd x, double gamma);

// Joint log density of (x, gamma, s) under the three-layer prior.  When
// s_prev is absent the chain's stationary law seeds the support bits.
double log_prior_joint(const VectorXcd& x, const VectorXd& gamma, const VectorXi& s,
                       const std::optional<VectorXi>& s_prev, const MarkovParams& markov,
                       const GammaHyper& hyper);

// One Markov step of every support bit.
VectorXi evolve_support(const VectorXi& s_prev, const MarkovParams& markov, Rng& rng);

// Stationary draw of the support bits.
VectorXi sample_support_stationary(const MarkovParams& markov, int n, Rng& rng);

struct PriorSample {
  VectorXi s;
  VectorXd gamma;
  VectorXcd x;
};

// Ancestral sample s -> gamma -> x (chained from s_prev when provided).
PriorSample sample_prior(const MarkovParams& markov, const GammaHyper& hyper, int n,
                         const std::optional<VectorXi>& s_prev, Rng& rng);

}  // namespace ddtrack
