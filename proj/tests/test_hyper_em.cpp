// SPDX-License-Identifier: Apache-2.0
//
// Rate learning for the birth/death support chains: exact smoothing checked
// against brute-force enumeration, count-ratio updates checked by hand, and
// full EM recovery of known rates from simulated activity evidence.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ddtrack/common.hpp"
#include "ddtrack/hyper_em.hpp"
#include "ddtrack/sparsity_prior.hpp"
#include "doctest.h"

using namespace ddtrack;
using Eigen::VectorXi;

namespace {

// Exhaustive reference: walk every binary sequence of length t_len and
// accumulate the exact posterior statistics under first-frame law
// lambda_init, transition rates markov, and per-frame evidence ratios lr.
struct BruteChain {
  VectorXd marginal;
  VectorXd pair11;
  double log_likelihood = 0.0;
};

BruteChain brute_force_chain(const VectorXd& lr, const MarkovParams& markov, double lambda_init) {
  const int t_len = static_cast<int>(lr.size());
  BruteChain out;
  out.marginal = VectorXd::Zero(t_len);
  out.pair11 = VectorXd::Zero(std::max(t_len - 1, 0));

  // Weights can span many orders of magnitude; hold them in log space and
  // subtract the running maximum before exponentiating.
  std::vector<double> logw(static_cast<std::size_t>(1) << t_len);
  double logw_max = -std::numeric_limits<double>::infinity();
  for (std::size_t mask = 0; mask < logw.size(); ++mask) {
    const int s0 = static_cast<int>(mask & 1u);
    double lw = std::log(s0 ? lambda_init : 1.0 - lambda_init) + s0 * lr[0];
    for (int t = 1; t < t_len; ++t) {
      const int prev = static_cast<int>((mask >> (t - 1)) & 1u);
      const int cur = static_cast<int>((mask >> t) & 1u);
      const double trans = prev ? (cur ? 1.0 - markov.rho10 : markov.rho10)
                                : (cur ? markov.rho01 : 1.0 - markov.rho01);
      lw += std::log(trans) + cur * lr[t];
    }
    logw[mask] = lw;
    logw_max = std::max(logw_max, lw);
  }

  double z = 0.0;
  for (std::size_t mask = 0; mask < logw.size(); ++mask) {
    const double w = std::exp(logw[mask] - logw_max);
    z += w;
    for (int t = 0; t < t_len; ++t) {
      if ((mask >> t) & 1u) out.marginal[t] += w;
      if (t >= 1 && ((mask >> t) & 1u) && ((mask >> (t - 1)) & 1u)) out.pair11[t - 1] += w;
    }
  }
  out.marginal /= z;
  if (t_len > 1) out.pair11 /= z;
  out.log_likelihood = logw_max + std::log(z);
  return out;
}

}  // namespace

TEST_CASE("evidence log ratio is the logit difference with clamped endpoints") {
  MatrixXd post(2, 2), prior(2, 2);
  post << 0.9, 0.2, 0.5, 1.0;
  prior << 0.5, 0.5, 0.2, 0.3;
  const MatrixXd lr = evidence_log_ratio(post, prior);
  const auto logit = [](double p) { return std::log(p) - std::log1p(-p); };
  CHECK(lr(0, 0) == doctest::Approx(logit(0.9) - logit(0.5)).epsilon(1e-12));
  CHECK(lr(0, 1) == doctest::Approx(logit(0.2) - logit(0.5)).epsilon(1e-12));
  CHECK(lr(1, 0) == doctest::Approx(logit(0.5) - logit(0.2)).epsilon(1e-12));
  // Certainty is clamped to 1 - 1e-12 before the logit, so the entry is
  // large but finite.
  CHECK(std::isfinite(lr(1, 1)));
  CHECK(lr(1, 1) == doctest::Approx(logit(1.0 - 1e-12) - logit(0.3)).epsilon(1e-9));

  MatrixXd wrong(3, 2);
  CHECK_THROWS_AS(evidence_log_ratio(post, wrong), std::invalid_argument);
}

TEST_CASE("forward-backward matches brute-force enumeration of all chains") {
  Rng rng = make_rng(41);
  const int t_len = 10;
  const std::vector<MarkovParams> rate_cases = {
      {0.1, 0.3}, {0.01, 0.1}, {0.45, 0.45}, {0.02, 0.01}};
  for (const MarkovParams& mk : rate_cases) {
    for (double lambda_init : {0.25, 0.5, mk.lambda()}) {
      MatrixXd lr(t_len, 3);
      for (int t = 0; t < t_len; ++t)
        for (int k = 0; k < 3; ++k) {
          std::normal_distribution<double> gauss(0.0, 2.0);
          lr(t, k) = gauss(rng);
        }
      lr(3, 1) = 30.0;   // near-certain evidence in both directions
      lr(7, 2) = -30.0;

      const ChainPosterior post = forward_backward(lr, mk, lambda_init);
      double ll = 0.0;
      for (int k = 0; k < 3; ++k) {
        const BruteChain ref = brute_force_chain(lr.col(k), mk, lambda_init);
        ll += ref.log_likelihood;
        for (int t = 0; t < t_len; ++t)
          CHECK(post.marginal(t, k) == doctest::Approx(ref.marginal[t]).epsilon(1e-10));
        for (int t = 0; t + 1 < t_len; ++t)
          CHECK(post.pair11(t, k) == doctest::Approx(ref.pair11[t]).epsilon(1e-10));
      }
      CHECK(post.log_likelihood == doctest::Approx(ll).epsilon(1e-10));
    }
  }
}

TEST_CASE("zero evidence reproduces the prior chain marginals exactly") {
  const MarkovParams mk{0.2, 0.35};
  const double lambda_init = 0.6;
  const int t_len = 12;
  const MatrixXd lr = MatrixXd::Zero(t_len, 2);
  const ChainPosterior post = forward_backward(lr, mk, lambda_init);

  double m = lambda_init;
  for (int t = 0; t < t_len; ++t) {
    CHECK(post.marginal(t, 0) == doctest::Approx(m).epsilon(1e-12));
    CHECK(post.marginal(t, 1) == doctest::Approx(m).epsilon(1e-12));
    m = m * (1.0 - mk.rho10) + (1.0 - m) * mk.rho01;
  }
  // With flat evidence the observation likelihood is identically one.
  CHECK(post.log_likelihood == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("forward-backward validates its inputs") {
  const MarkovParams mk;
  CHECK_THROWS_AS(forward_backward(MatrixXd(0, 3), mk, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(forward_backward(MatrixXd::Zero(2, 1), mk, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(forward_backward(MatrixXd::Zero(2, 1), mk, 1.1), std::invalid_argument);
}

TEST_CASE("rate update is the expected transition-count ratio") {
  ChainPosterior post;
  post.marginal.resize(3, 1);
  post.marginal << 0.3, 0.6, 0.8;
  post.pair11.resize(2, 1);
  post.pair11 << 0.2, 0.5;
  const MarkovParams fallback{0.77, 0.88};
  const MarkovParams rho = em_update_rho(post, fallback);
  // from1 = 0.3 + 0.6, flips(1->0) = (0.3-0.2) + (0.6-0.5)
  CHECK(rho.rho10 == doctest::Approx(0.2 / 0.9).epsilon(1e-14));
  // from0 = 0.7 + 0.4, flips(0->1) = (0.6-0.2) + (0.8-0.5)
  CHECK(rho.rho01 == doctest::Approx(0.7 / 1.1).epsilon(1e-14));
}

TEST_CASE("rate update on certain posteriors reproduces empirical counts") {
  // Three hard chains of length 5:  00110, 11111, 01010.
  const std::vector<std::vector<int>> chains = {
      {0, 0, 1, 1, 0}, {1, 1, 1, 1, 1}, {0, 1, 0, 1, 0}};
  ChainPosterior post;
  post.marginal.resize(5, 3);
  post.pair11.resize(4, 3);
  for (int k = 0; k < 3; ++k) {
    for (int t = 0; t < 5; ++t) post.marginal(t, k) = chains[k][t];
    for (int t = 1; t < 5; ++t) post.pair11(t - 1, k) = chains[k][t - 1] & chains[k][t];
  }
  const MarkovParams rho = em_update_rho(post, MarkovParams{});
  // Count transitions over the 12 adjacent pairs by hand:
  //   starting from 1: 8 pairs, of which 1->0 happens 3 times
  //   starting from 0: 4 pairs, of which 0->1 happens 3 times
  CHECK(rho.rho10 == doctest::Approx(3.0 / 8.0).epsilon(1e-14));
  CHECK(rho.rho01 == doctest::Approx(3.0 / 4.0).epsilon(1e-14));
}

TEST_CASE("empty denominators keep the incoming rates") {
  ChainPosterior post;
  post.marginal = MatrixXd::Zero(4, 2);  // never active: no mass leaves state 1
  post.pair11 = MatrixXd::Zero(3, 2);
  const MarkovParams fallback{0.123, 0.456};
  const MarkovParams rho = em_update_rho(post, fallback);
  CHECK(rho.rho10 == 0.456);  // untouched
  CHECK(rho.rho01 == doctest::Approx(0.0).epsilon(1e-14));  // 0->1 never observed

  // Single-frame statistics cannot inform transitions at all.
  ChainPosterior single;
  single.marginal = MatrixXd::Constant(1, 4, 0.5);
  single.pair11 = MatrixXd::Zero(0, 4);
  const MarkovParams kept = em_update_rho(single, fallback);
  CHECK(kept.rho01 == 0.123);
  CHECK(kept.rho10 == 0.456);
}

TEST_CASE("EM recovers the simulated birth and death rates") {
  const MarkovParams truth{0.1, 0.05};
  const int n = 64, t_len = 200;
  Rng rng = make_rng(1234);

  // Simulate the support chains, then hand EM strong-but-soft evidence.
  MatrixXd lr(t_len, n);
  VectorXi s = sample_support_stationary(truth, n, rng);
  for (int t = 0; t < t_len; ++t) {
    if (t > 0) s = evolve_support(s, truth, rng);
    for (int k = 0; k < n; ++k) lr(t, k) = s[k] ? 8.0 : -8.0;
  }

  const MarkovParams init{0.3, 0.3};
  const EmResult res = em_loop(lr, init, 50, 1e-6);
  CHECK(res.converged);
  CHECK_FALSE(res.degenerate);
  CHECK(std::abs(res.rho.rho01 - truth.rho01) < 0.03);
  CHECK(std::abs(res.rho.rho10 - truth.rho10) < 0.03);

  // The reported likelihood trace must never decrease.
  REQUIRE(res.loglik_trace.size() >= 2);
  for (std::size_t i = 1; i < res.loglik_trace.size(); ++i) {
    const double slack = 1e-9 * std::max(1.0, std::abs(res.loglik_trace[i - 1]));
    CHECK(res.loglik_trace[i] >= res.loglik_trace[i - 1] - slack);
  }
}

TEST_CASE("a single frame of evidence degenerates gracefully") {
  const MatrixXd lr = MatrixXd::Constant(1, 8, 3.0);
  const MarkovParams init{0.2, 0.4};
  const EmResult res = em_loop(lr, init, 10, 1e-6);
  CHECK(res.degenerate);
  CHECK_FALSE(res.converged);
  CHECK(res.iters == 0);
  CHECK(res.loglik_trace.empty());
  CHECK(res.rho.rho01 == 0.2);
  CHECK(res.rho.rho10 == 0.4);
}

TEST_CASE("smoothing pulls marginals toward the evidence") {
  const MarkovParams mk{0.1, 0.1};
  MatrixXd lr(2, 1);
  lr << 2.0, -2.0;
  const ChainPosterior post = forward_backward(lr, mk, 0.5);
  CHECK(post.marginal(0, 0) > 0.5);
  CHECK(post.marginal(1, 0) < 0.5);
  // Smoothing couples the frames: the strong first frame drags the second
  // above what its own evidence alone would give.
  const double solo = 1.0 / (1.0 + std::exp(2.0));
  CHECK(post.marginal(1, 0) > solo);
}
