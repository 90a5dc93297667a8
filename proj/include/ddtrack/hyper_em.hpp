// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ddtrack/sparsity_prior.hpp"

namespace ddtrack {

// Smoothed statistics of the binary support chains.  Chains are independent
// given the rates, so everything is computed per grid index and pooled.
struct ChainPosterior {
  MatrixXd marginal;   // T x n: E[s_t]
  MatrixXd pair11;     // (T-1) x n: E[s_{t-1} s_t]
  double log_likelihood = 0.0;
};

// Per-frame support evidence as log likelihood ratios log L(s=1)/L(s=0),
// one row per frame, one column per grid index.  Ratios are what the
// tracking posterior exposes: posterior odds divided by incoming prior odds.
MatrixXd evidence_log_ratio(const MatrixXd& pi_post, const MatrixXd& pi_prior);

// Exact smoothing of every chain under the given rates.  lambda_init is the
// activity law of the first frame (held fixed while rates are learned, which
// keeps the EM iteration provably monotone in the likelihood it reports).
ChainPosterior forward_backward(const MatrixXd& log_ratio, const MarkovParams& markov,
                                double lambda_init);

// Transition-count ratio estimators from smoothed statistics: expected
// transitions out of a state over expected time spent in it.  A denominator
// of zero keeps the corresponding incoming rate.
MarkovParams em_update_rho(const ChainPosterior& post, const MarkovParams& fallback);

struct EmResult {
  MarkovParams rho;
  int iters = 0;
  bool converged = false;
  bool degenerate = false;  // too little data to update anything
  std::vector<double> loglik_trace;
};

// Alternate smoothing and rate re-estimation until the rates settle.
EmResult em_loop(const MatrixXd& log_ratio, const MarkovParams& init, int max_iters, double tol);

}  // namespace ddtrack
