// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ddtrack/ddvbi_solver.hpp"
#include "ddtrack/doppler_comp.hpp"
#include "ddtrack/hyper_em.hpp"

namespace ddtrack {

// End-to-end tracking policies compared by the Monte-Carlo harness.
enum class Scheme {
  kDesigned,  // tracker + training vector designed from last uplink estimate
  kRandom,    // tracker + random unit-norm training vector every frame
  kGenie,     // oracle side information: true angles/offsets and support
  kNoComp,    // same as kDesigned but skips the per-symbol Doppler rotors
};

const char* scheme_name(Scheme s);
std::vector<Scheme> parse_schemes(const std::string& csv);  // throws on unknown names

struct ExperimentConfig {
  int n_rx = 32;  // receive array size (also the receive-grid size)
  int n_tx = 32;  // transmit array size (also the transmit-grid size)
  int n_p = 8;    // downlink pilots per frame
  int subframe_len = 12500;  // symbols per subframe; a frame is two subframes
  int frames = 4;
  int trials = 50;
  double snr_db = 0.0;

  // Physical scenario; the normalized Doppler (cycles per symbol) is derived
  // from these unless fd_cycles is set explicitly (>= 0).
  double carrier_ghz = 28.0;
  double bandwidth_mhz = 50.0;
  double speed_kmh = 380.0;
  double fd_cycles = -1.0;

  ChannelGenConfig chan;  // chan.fd is overwritten with resolved_fd()
  MarkovParams markov;
  GammaHyper hyper;
  SolverConfig solver;

  double mu = 0.9;         // training-design energy fraction
  double rho_split = 0.5;  // training-design power split

  bool limited_rf = false;  // combine pilots through n_b random beams
  int n_b = 8;
  bool per_pilot_combiners = true;

  double dom_frac = 0.1;  // dominant-direction energy threshold
  int dom_cap = 4;        // beams (data streams) used after compensation

  bool learn_markov = false;  // re-fit the support transition rates online

  std::uint64_t seed = 20260816ULL;
  int threads = 1;
  bool track_jsonl = false;  // per-frame diagnostics sidecar
  std::string out_dir = ".";
  std::string out_prefix = "sweep";

  // Sweep axes (empty: use the scalar field above).
  std::vector<int> sweep_n_p;
  std::vector<double> sweep_snr_db;
  std::vector<int> sweep_n_rx;
  std::vector<Scheme> schemes{Scheme::kDesigned, Scheme::kRandom, Scheme::kGenie,
                              Scheme::kNoComp};

  double resolved_fd() const;
  void validate() const;  // throws std::invalid_argument on nonsense
};

struct FrameMetrics {
  double channel_mse = 0.0;  // coefficient-vector error ||x_hat - x||^2 / ||x||^2
  bool channel_abs = false;  // channel_mse is absolute because ||x_true|| == 0
  double recon_nmse = 0.0;   // beamformed-channel reconstruction error (diagnostic)
  double freq_se = 0.0;      // squared Doppler error (relative when fd != 0)
  bool freq_abs = false;     // freq_se is absolute because true fd == 0
  double rate_bits = 0.0;    // bits/symbol over the data subframe
  double fd_hat = 0.0;
  double eta_err = 0.0;       // wrapped rotation error
  int n_selected = 0;         // compensated directions
  int support_errors = 0;     // hard support decisions vs truth
  double free_energy = 0.0;
  int outer_iters = 0;
  bool converged = false;
};

struct TrialResult {
  std::vector<FrameMetrics> frames;
  // Steady-state averages (frames after the first; all frames when there is
  // only one, since the first frame has no design feedback yet).
  double channel_mse = 0.0;
  double freq_mse = 0.0;
  double rate_bits = 0.0;
};

// One tracked link: truth evolution, per-frame training/observation/solve,
// compensation, uplink feedback.  truth_seed must be shared across schemes
// of the same cell/trial so they face the same channel.
TrialResult run_trial(const ExperimentConfig& cfg, Scheme scheme, std::uint64_t truth_seed,
                      std::uint64_t alg_seed);

// Relative squared error of the partial coefficient vector,
// ||x_hat - x_true||^2 / ||x_true||^2, the per-frame channel metric.
// Falls back to the absolute squared error (flagged) when x_true is zero.
double channel_mse(const VectorXcd& x_hat, const VectorXcd& x_true, bool* absolute_flag = nullptr);

// Beamformed-channel reconstruction error at the symbols of sched:
// sum_k ||A_{R,i_k}(phi_hat) x_hat - H_{i_k} v||^2 / sum_k ||H_{i_k} v||^2.
// Unlike channel_mse this folds in the estimated Doppler/rotation/offsets,
// so it is kept as a per-frame diagnostic of tone coherence.
double partial_channel_nmse(const FrameTruth& t, const AngularGrid& g, int n_rx,
                            const PilotSchedule& sched, const VectorXcd& v,
                            const PhiParams& phi_hat, const VectorXcd& x_hat);

// Squared Doppler error, relative when fd_true != 0 (absolute_flag reports
// which convention applied).
double freq_squared_error(double fd_hat, double fd_true, bool* absolute_flag);

struct SweepResult {
  std::string csv_path;
  std::string json_path;
  std::string jsonl_path;  // empty unless track_jsonl
  int rows = 0;
  double wall_seconds = 0.0;
};

// Cartesian sweep over (n_p, snr_db, n_rx) x schemes x trials.  Results are
// buffered and written in canonical order, so the CSV bytes are independent
// of the thread count; wall time appears only in the JSON sidecar.
SweepResult run_sweep(const ExperimentConfig& cfg, std::ostream* log);

}  // namespace ddtrack
