// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <random>

namespace ddtrack {

using cxd = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using Eigen::VectorXi;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cxd kJ{0.0, 1.0};

// Stateless 64-bit mixer; used to derive independent, reproducible RNG streams
// from (base seed, cell indices) without any shared state between workers.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

// CN(0,1): unit-variance circularly-symmetric complex Gaussian.
inline cxd cnormal(Rng& rng) {
  static thread_local std::normal_distribution<double> n01(0.0, 1.0);
  return cxd(n01(rng), n01(rng)) / std::sqrt(2.0);
}

inline VectorXcd cnormal_vector(Rng& rng, Eigen::Index n) {
  VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = cnormal(rng);
  return v;
}

inline MatrixXcd cnormal_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  MatrixXcd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = cnormal(rng);
  return m;
}

// x*log(y) with the 0*log(0) = 0 convention (support/entropy bookkeeping).
inline double xlogy(double x, double y) {
  if (x == 0.0) return 0.0;
  return x * std::log(y);
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

}  // namespace ddtrack
