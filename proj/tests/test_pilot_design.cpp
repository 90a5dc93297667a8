// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "ddtrack/pilot_design.hpp"

using namespace ddtrack;

TEST_CASE("pilot schedule spreads symbols by the floor rule") {
  const PilotSchedule s = make_pilot_schedule(8, 12500);
  REQUIRE(s.indices.size() == 8);
  for (int k = 0; k < 8; ++k) CHECK(s.indices[k] == (k * 12500) / 8);
  CHECK(s.indices.front() == 0);
  CHECK(s.indices.back() < 12500);
  const PilotSchedule one = make_pilot_schedule(1, 100);
  CHECK(one.indices == std::vector<int>{0});
  CHECK_THROWS_AS(make_pilot_schedule(0, 100), std::invalid_argument);
  CHECK_THROWS_AS(make_pilot_schedule(8, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_pilot_schedule(101, 100), std::invalid_argument);
}

TEST_CASE("training basis is the unitary DFT") {
  for (const int m : {4, 8, 13}) {
    const MatrixXcd b = dft_basis(m);
    CHECK((b.adjoint() * b - MatrixXcd::Identity(m, m)).norm() < 1e-12);
    for (int k = 0; k < m; ++k)
      for (int l = 0; l < m; ++l) {
        const cxd want = std::exp(-kJ * 2.0 * kPi * double(k) * double(l) / double(m)) /
                         std::sqrt(double(m));
        CHECK(std::abs(b(k, l) - want) < 1e-13);
      }
  }
}

TEST_CASE("exploration spreads power evenly over all beams") {
  Rng rng = make_rng(7);
  const int m = 16;
  const MatrixXcd basis = dft_basis(m);
  for (int rep = 0; rep < 10; ++rep) {
    const VectorXcd v = exploration_vector(basis, rng);
    CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
    for (int l = 0; l < m; ++l) {
      CHECK(std::abs(basis.col(l).dot(v)) == doctest::Approx(1.0 / std::sqrt(double(m))).epsilon(1e-10));
    }
  }
}

TEST_CASE("beam selection is the smallest set reaching the energy target") {
  // Exhaustive oracle over all subsets, feasible because m <= 12.
  Rng rng = make_rng(99);
  const int m = 10;
  const MatrixXcd basis = dft_basis(m);
  const double mu = 0.9;
  for (int rep = 0; rep < 40; ++rep) {
    const MatrixXcd h = cnormal_matrix(rng, 3, m);
    const TrainingDesign d = design_training_vector(h, basis, mu, 0.5, rng);
    REQUIRE(!d.pure_exploration);

    VectorXd energy(m);
    for (int l = 0; l < m; ++l) energy[l] = (h * basis.col(l)).squaredNorm();
    const double target = mu * energy.sum();

    int best_card = m + 1;
    double best_energy = -1.0;
    for (int mask = 1; mask < (1 << m); ++mask) {
      double e = 0.0;
      int card = 0;
      for (int l = 0; l < m; ++l)
        if (mask & (1 << l)) {
          e += energy[l];
          ++card;
        }
      if (e >= target) {
        if (card < best_card || (card == best_card && e > best_energy)) {
          best_card = card;
          best_energy = e;
        }
      }
    }
    REQUIRE(best_card <= m);
    CHECK(static_cast<int>(d.selected.size()) == best_card);
    double got_energy = 0.0;
    for (const int l : d.selected) got_energy += energy[l];
    CHECK(got_energy == doctest::Approx(best_energy).epsilon(1e-12));
    // Selected beams are reported strongest first.
    for (std::size_t i = 1; i < d.selected.size(); ++i)
      CHECK(energy[d.selected[i - 1]] >= energy[d.selected[i]] - 1e-15);
  }
}

TEST_CASE("energy ties resolve to the lower beam index") {
  Rng rng = make_rng(123);
  const int m = 6;
  const MatrixXcd basis = dft_basis(m);
  // A standard-basis row reads the first element of every beam, which is
  // exactly 1/sqrt(m) for each of them: all energies are the same double,
  // so the selection order is decided purely by the tie rule.
  MatrixXcd h = MatrixXcd::Zero(1, m);
  h(0, 0) = 1.0;
  const TrainingDesign d = design_training_vector(h, basis, 0.5, 0.5, rng);
  // Equal energies and a 0.5 target: exactly three beams, lowest indices.
  REQUIRE(d.selected.size() == 3);
  CHECK(d.selected[0] == 0);
  CHECK(d.selected[1] == 1);
  CHECK(d.selected[2] == 2);
}

TEST_CASE("designed vector splits power exactly between the two sets") {
  Rng rng = make_rng(321);
  const int m = 12;
  const MatrixXcd basis = dft_basis(m);
  for (const double rho : {0.0, 0.3, 0.5, 1.0}) {
    const MatrixXcd h = cnormal_matrix(rng, 2, m);
    const TrainingDesign d = design_training_vector(h, basis, 0.8, rho, rng);
    REQUIRE(d.selected.size() < static_cast<std::size_t>(m));
    CHECK(d.v.norm() == doctest::Approx(1.0).epsilon(1e-12));
    double sel_power = 0.0;
    for (const int l : d.selected) sel_power += std::norm(basis.col(l).dot(d.v));
    CHECK(sel_power == doctest::Approx(rho).epsilon(1e-10));
    // Exploration beams share the remainder at equal power.
    std::set<int> sel(d.selected.begin(), d.selected.end());
    const double n_exp = double(m - d.selected.size());
    for (int l = 0; l < m; ++l) {
      if (sel.count(l)) continue;
      CHECK(std::norm(basis.col(l).dot(d.v)) == doctest::Approx((1.0 - rho) / n_exp).epsilon(1e-9));
    }
  }
}

TEST_CASE("degenerate selections fall back gracefully") {
  Rng rng = make_rng(555);
  const int m = 8;
  const MatrixXcd basis = dft_basis(m);
  // Zero channel estimate: nothing to exploit.
  const TrainingDesign d0 = design_training_vector(MatrixXcd::Zero(2, m), basis, 0.9, 0.5, rng);
  CHECK(d0.pure_exploration);
  CHECK(d0.v.norm() == doctest::Approx(1.0).epsilon(1e-12));
  // mu = 1 selects every beam; all power goes to the (full) selected set.
  const MatrixXcd h = cnormal_matrix(rng, 2, m);
  const TrainingDesign dall = design_training_vector(h, basis, 1.0, 0.5, rng);
  CHECK(dall.selected.size() == static_cast<std::size_t>(m));
  CHECK(dall.v.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(design_training_vector(h, basis, 0.0, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS(design_training_vector(h, basis, 1.1, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS(design_training_vector(h, basis, 0.9, -0.1, rng), std::invalid_argument);
}

TEST_CASE("combiners are orthonormal and shared when requested") {
  Rng rng = make_rng(777);
  const Combiners full = make_combiners(16, 4, false, 0, true, rng);
  CHECK(full.full_rf);
  CHECK(full.rows_per_pilot(16) == 16);
  const Combiners lim = make_combiners(16, 4, true, 5, true, rng);
  CHECK(!lim.full_rf);
  CHECK(lim.rows_per_pilot(16) == 5);
  REQUIRE(lim.u.size() == 4);
  for (const MatrixXcd& u : lim.u) {
    REQUIRE(u.rows() == 16);
    REQUIRE(u.cols() == 5);
    CHECK((u.adjoint() * u - MatrixXcd::Identity(5, 5)).norm() < 1e-12);
  }
  CHECK((lim.u[0] - lim.u[1]).norm() > 1e-3);  // fresh per pilot
  const Combiners shared = make_combiners(16, 4, true, 5, false, rng);
  REQUIRE(shared.u.size() == 4);
  CHECK((shared.u[0] - shared.u[3]).norm() == 0.0);
}

TEST_CASE("noise calibration matches the isotropic average received power") {
  const ArrayShape shape{16, 12};
  const AngularGrid g = make_angular_grid(shape.n_tx, shape.n_rx);
  Rng rng = make_rng(888);
  ChannelGenConfig cg;
  const FrameTruth t = make_first_frame(g, cg, rng);
  const PilotSchedule sched = make_pilot_schedule(4, 1000);
  const double snr_db = 7.0;
  const double nv = noise_var_for_snr(t, g, shape, sched, snr_db);
  const MatrixXcd h0 = render_channel(t, g, shape, sched.indices[0]);
  CHECK(nv == doctest::Approx(h0.squaredNorm() / (shape.n_tx * shape.n_rx * db_to_linear(snr_db)))
                  .epsilon(1e-12));
  // Monte-Carlo isotropic identity: E_v ||H v||^2 = ||H||_F^2 / n_tx.
  double mc = 0.0;
  const int reps = 4000;
  for (int rep = 0; rep < reps; ++rep) {
    mc += (h0 * cnormal_vector(rng, shape.n_tx).normalized()).squaredNorm() / reps;
  }
  CHECK(mc == doctest::Approx(h0.squaredNorm() / shape.n_tx).epsilon(0.05));
}

TEST_CASE("noiseless observations satisfy the stacked operator identity") {
  const ArrayShape shape{12, 10};
  const AngularGrid g = make_angular_grid(shape.n_tx, shape.n_rx);
  Rng rng = make_rng(999);
  ChannelGenConfig cg;
  const PilotSchedule sched = make_pilot_schedule(5, 2000);
  for (const bool limited : {false, true}) {
    for (int rep = 0; rep < 25; ++rep) {
      const FrameTruth t = make_first_frame(g, cg, rng);
      const VectorXcd v = cnormal_vector(rng, shape.n_tx).normalized();
      const Combiners comb = make_combiners(shape.n_rx, sched.n_p, limited, 4, true, rng);
      const Observation obs = synthesize_observation(t, g, shape, sched, v, comb, 0.0, rng);
      PhiParams phi;
      phi.beta_r = aoa_offsets(t, g);
      phi.eta = t.eta;
      phi.fd = t.fd;
      const MatrixXcd f = assemble_f(g, phi, sched, comb, shape.n_rx);
      const VectorXcd x = partial_coefficients(t, g, v);
      REQUIRE(obs.y.size() == f.rows());
      CHECK((obs.y - f * x).norm() / obs.y.norm() < 1e-11);
    }
  }
}

TEST_CASE("noisy observations carry the requested noise level") {
  const ArrayShape shape{16, 8};
  const AngularGrid g = make_angular_grid(shape.n_tx, shape.n_rx);
  Rng rng = make_rng(1111);
  ChannelGenConfig cg;
  const FrameTruth t = make_first_frame(g, cg, rng);
  const VectorXcd v = cnormal_vector(rng, shape.n_tx).normalized();
  const PilotSchedule sched = make_pilot_schedule(4, 1000);
  const Combiners comb = make_combiners(shape.n_rx, sched.n_p, false, 0, true, rng);
  const Observation clean = synthesize_observation(t, g, shape, sched, v, comb, 0.0, rng);
  const double nv = 0.25;
  double acc = 0.0;
  const int reps = 3000;
  for (int rep = 0; rep < reps; ++rep) {
    const Observation noisy = synthesize_observation(t, g, shape, sched, v, comb, nv, rng);
    acc += (noisy.y - clean.y).squaredNorm() / reps;
  }
  // Unitary combining preserves the per-entry noise variance.
  CHECK(acc == doctest::Approx(nv * clean.y.size()).epsilon(0.05));
}
