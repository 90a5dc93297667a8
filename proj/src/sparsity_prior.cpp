// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/sparsity_prior.hpp"

#include <cmath>
#include <stdexcept>

namespace ddtrack {

double log_gamma_pdf(double x, double shape, double rate) {
  if (x <= 0.0) throw std::domain_error("gamma density needs a positive argument");
  if (shape <= 0.0 || rate <= 0.0) throw std::domain_error("gamma density needs positive parameters");
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_cn_pdf(cxd x, double gamma) {
  if (gamma <= 0.0) throw std::domain_error("complex normal precision must be positive");
  return std::log(gamma) - std::log(kPi) - gamma * std::norm(x);
}

static double log_bernoulli(int s, double p) {
  return s ? xlogy(1.0, p) : xlogy(1.0, 1.0 - p);
}

double log_prior_joint(const VectorXcd& x, const VectorXd& gamma, const VectorXi& s,
                       const std::optional<VectorXi>& s_prev, const MarkovParams& markov,
                       const GammaHyper& hyper) {
  const auto n = x.size();
  if (gamma.size() != n || s.size() != n || (s_prev && s_prev->size() != n))
    throw std::invalid_argument("layer dimensions disagree");

  double lp = 0.0;
  const double lambda = markov.lambda();
  for (Eigen::Index k = 0; k < n; ++k) {
    if (s_prev) {
      const double p1 = (*s_prev)[k] ? 1.0 - markov.rho10 : markov.rho01;
      lp += log_bernoulli(s[k], p1);
    } else {
      lp += log_bernoulli(s[k], lambda);
    }
    lp += s[k] ? log_gamma_pdf(gamma[k], hyper.a, hyper.b)
               : log_gamma_pdf(gamma[k], hyper.a_bar, hyper.b_bar);
    lp += log_cn_pdf(x[k], gamma[k]);
  }
  return lp;
}

VectorXi evolve_support(const VectorXi& s_prev, const MarkovParams& markov, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  VectorXi s(s_prev.size());
  for (Eigen::Index k = 0; k < s_prev.size(); ++k) {
    const double p1 = s_prev[k] ? 1.0 - markov.rho10 : markov.rho01;
    s[k] = u01(rng) < p1 ? 1 : 0;
  }
  return s;
}

VectorXi sample_support_stationary(const MarkovParams& markov, int n, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double lambda = markov.lambda();
  VectorXi s(n);
  for (int k = 0; k < n; ++k) s[k] = u01(rng) < lambda ? 1 : 0;
  return s;
}

PriorSample sample_prior(const MarkovParams& markov, const GammaHyper& hyper, int n,
                         const std::optional<VectorXi>& s_prev, Rng& rng) {
  PriorSample out;
  out.s = s_prev ? evolve_support(*s_prev, markov, rng) : sample_support_stationary(markov, n, rng);
  out.gamma.resize(n);
  out.x.resize(n);
  for (int k = 0; k < n; ++k) {
    const double shape = out.s[k] ? hyper.a : hyper.a_bar;
    const double rate = out.s[k] ? hyper.b : hyper.b_bar;
    std::gamma_distribution<double> g(shape, 1.0 / rate);  // std uses scale = 1/rate
    double gk = g(rng);
    while (gk <= 0.0) gk = g(rng);  // guard against underflow to exactly zero
    out.gamma[k] = gk;
    out.x[k] = cnormal(rng) / std::sqrt(gk);
  }
  return out;
}

}  // namespace ddtrack
