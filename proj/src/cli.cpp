// SPDX-License-Identifier: Apache-2.0
#include "ddtrack/cli.hpp"

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ddtrack/experiment.hpp"
#include "json.hpp"

namespace ddtrack {
namespace {

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(std::stoi(tok));
  }
  return out;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(std::stod(tok));
  }
  return out;
}

int do_simulate(const ExperimentConfig& cfg, int trial) {
  cfg.validate();
  const AngularGrid grid = make_angular_grid(cfg.n_tx, cfg.n_rx);
  ChannelGenConfig chan = cfg.chan;
  chan.fd = cfg.resolved_fd();
  Rng rng = make_rng(mix_seed(cfg.seed, 0, static_cast<std::uint64_t>(trial)));

  FrameTruth t;
  for (int f = 0; f < cfg.frames; ++f) {
    bool forced = false;
    t = (f == 0) ? make_first_frame(grid, chan, rng)
                 : evolve_frame(t, grid, cfg.markov, chan, rng, &forced);
    nlohmann::ordered_json j;
    j["frame"] = f;
    j["n_paths"] = t.n_paths();
    j["aoa_idx"] = std::vector<int>(t.aoa_idx.data(), t.aoa_idx.data() + t.aoa_idx.size());
    j["aod_idx"] = std::vector<int>(t.aod_idx.data(), t.aod_idx.data() + t.aod_idx.size());
    std::vector<double> mags(static_cast<std::size_t>(t.n_paths()));
    for (int q = 0; q < t.n_paths(); ++q) mags[static_cast<std::size_t>(q)] = std::abs(t.alpha[q]);
    j["alpha_abs"] = mags;
    j["fd"] = t.fd;
    j["eta"] = t.eta;
    j["forced_rebirth"] = forced;
    std::cout << j.dump() << '\n';
  }
  return 0;
}

int do_track(const ExperimentConfig& cfg, const std::string& scheme_str, int trial) {
  const Scheme scheme = parse_schemes(scheme_str).at(0);
  // Same seeding rule as the first sweep cell, so a track run reproduces a
  // sweep trial exactly.
  const std::uint64_t truth_seed = mix_seed(cfg.seed, 0, static_cast<std::uint64_t>(trial));
  const std::uint64_t alg_seed = mix_seed(truth_seed, 1000ULL + static_cast<std::uint64_t>(scheme));
  const TrialResult r = run_trial(cfg, scheme, truth_seed, alg_seed);

  for (std::size_t t = 0; t < r.frames.size(); ++t) {
    const FrameMetrics& fm = r.frames[t];
    nlohmann::ordered_json j;
    j["frame"] = t;
    j["channel_mse"] = fm.channel_mse;
    j["channel_abs"] = fm.channel_abs;
    j["recon_nmse"] = fm.recon_nmse;
    j["freq_se"] = fm.freq_se;
    j["freq_abs"] = fm.freq_abs;
    j["rate_bits"] = fm.rate_bits;
    j["fd_hat"] = fm.fd_hat;
    j["eta_err"] = fm.eta_err;
    j["n_selected"] = fm.n_selected;
    j["support_errors"] = fm.support_errors;
    j["free_energy"] = fm.free_energy;
    j["outer_iters"] = fm.outer_iters;
    j["converged"] = fm.converged;
    std::cout << j.dump() << '\n';
  }
  nlohmann::ordered_json sum;
  sum["scheme"] = scheme_name(scheme);
  sum["trial"] = trial;
  sum["channel_mse"] = r.channel_mse;
  sum["freq_mse"] = r.freq_mse;
  sum["rate_bits"] = r.rate_bits;
  std::cout << sum.dump() << '\n';
  return 0;
}

int do_sweep(const ExperimentConfig& cfg) {
  const SweepResult res = run_sweep(cfg, &std::cout);
  nlohmann::ordered_json j;
  j["csv"] = res.csv_path;
  j["meta"] = res.json_path;
  if (!res.jsonl_path.empty()) j["jsonl"] = res.jsonl_path;
  j["rows"] = res.rows;
  std::cout << j.dump() << '\n';
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  ExperimentConfig cfg;
  std::string schemes_csv, sweep_np, sweep_snr, sweep_nrx;
  std::string scheme_one = "ddvbi-designed";
  int trial = 0;

  CLI::App app{"Doppler-aware multipath channel tracking: simulator, solver, and Monte-Carlo harness"};
  app.set_config("--config", "", "read options from a key=value file");
  app.require_subcommand(1);

  // Scenario geometry and schedule.
  app.add_option("--n-rx", cfg.n_rx, "receive array size (and receive-grid size)");
  app.add_option("--n-tx", cfg.n_tx, "transmit array size (and transmit-grid size)");
  app.add_option("--n-p", cfg.n_p, "downlink pilots per frame");
  app.add_option("--subframe-len", cfg.subframe_len, "symbols per subframe");
  app.add_option("--frames", cfg.frames, "frames per trial");
  app.add_option("--trials", cfg.trials, "Monte-Carlo trials per cell");
  app.add_option("--snr-db", cfg.snr_db, "per-receive-antenna pilot SNR in dB");

  // Physical scenario / Doppler.
  app.add_option("--carrier-ghz", cfg.carrier_ghz, "carrier frequency in GHz");
  app.add_option("--bandwidth-mhz", cfg.bandwidth_mhz, "symbol bandwidth in MHz");
  app.add_option("--speed-kmh", cfg.speed_kmh, "terminal speed in km/h");
  app.add_option("--fd-cycles", cfg.fd_cycles,
                 "normalized Doppler in cycles/symbol (overrides the physical scenario when >= 0)");
  app.add_option("--fd-max", cfg.solver.fd_max, "solver's admissible Doppler range");

  // Channel generator.
  app.add_flag("--fixed-l,!--no-fixed-l", cfg.chan.fixed_l, "fixed path count instead of Poisson");
  app.add_option("--l-fixed", cfg.chan.l_fixed, "path count when --fixed-l");
  app.add_option("--poisson-mean", cfg.chan.poisson_mean, "mean of the truncated path-count law");
  app.add_option("--l-max", cfg.chan.l_max, "maximum path count");
  app.add_option("--alpha-decay-db", cfg.chan.alpha_decay_db, "per-path gain profile decay in dB");
  app.add_flag("--redraw-eta,!--no-redraw-eta", cfg.chan.redraw_eta,
               "draw a fresh rotation angle each frame");
  app.add_option("--rho01", cfg.markov.rho01, "support birth rate P(0 -> 1)");
  app.add_option("--rho10", cfg.markov.rho10, "support death rate P(1 -> 0)");

  // Training design and RF front end.
  app.add_option("--mu", cfg.mu, "training-design energy fraction");
  app.add_option("--rho-split", cfg.rho_split, "training-design power split");
  app.add_flag("--limited-rf,!--no-limited-rf", cfg.limited_rf,
               "combine each pilot through n-b random beams");
  app.add_option("--n-b", cfg.n_b, "combiner beams per pilot in limited-RF mode");
  app.add_flag("--per-pilot-combiners,!--no-per-pilot-combiners", cfg.per_pilot_combiners,
               "fresh combiner per pilot instead of one per subframe");

  // Compensation and feedback.
  app.add_option("--dom-frac", cfg.dom_frac, "dominant-direction energy threshold");
  app.add_option("--dom-cap", cfg.dom_cap, "maximum compensated directions (data streams)");
  app.add_flag("--learn-markov,!--no-learn-markov", cfg.learn_markov,
               "re-fit the support transition rates online");

  // Solver knobs.
  app.add_option("--max-outer-iters", cfg.solver.max_outer_iters, "outer iteration cap");
  app.add_option("--max-estep-sweeps", cfg.solver.max_estep_sweeps, "factor-update sweep cap");
  app.add_option("--elbo-tol", cfg.solver.elbo_tol, "relative free-energy tolerance");
  app.add_option("--phi-tol", cfg.solver.phi_tol, "scaled parameter-step tolerance");
  app.add_option("--fd-scan-points", cfg.solver.fd_scan_points, "first-frame Doppler scan points");
  app.add_option("--eta-scan-points", cfg.solver.eta_scan_points, "rotation scan points");
  app.add_flag("--rescan-eta,!--no-rescan-eta", cfg.solver.rescan_eta_every_frame,
               "rescan the rotation angle on every frame");
  app.add_flag("--estimate-beta,!--no-estimate-beta", cfg.solver.estimate_beta,
               "estimate per-grid-point angle offsets");
  app.add_flag("--estimate-eta,!--no-estimate-eta", cfg.solver.estimate_eta,
               "estimate the rotation angle");
  app.add_flag("--estimate-fd,!--no-estimate-fd", cfg.solver.estimate_fd,
               "estimate the Doppler shift");

  // Harness.
  app.add_option("--seed", cfg.seed, "master seed");
  app.add_option("--threads", cfg.threads, "worker threads (output bytes are unaffected)");
  app.add_flag("--jsonl,!--no-jsonl", cfg.track_jsonl, "write per-frame diagnostics JSONL");
  app.add_option("--out-dir", cfg.out_dir, "output directory")->envname("DDTRACK_OUT_DIR");
  app.add_option("--out-prefix", cfg.out_prefix, "output file prefix");
  app.add_option("--schemes", schemes_csv,
                 "comma list of ddvbi-designed, ddvbi-random, genie-oracle, no-compensation");
  app.add_option("--sweep-n-p", sweep_np, "comma list of pilot counts to sweep");
  app.add_option("--sweep-snr-db", sweep_snr, "comma list of SNRs to sweep");
  app.add_option("--sweep-n-rx", sweep_nrx, "comma list of receive array sizes to sweep");

  CLI::App* sim = app.add_subcommand("simulate", "render a synthetic channel track (truth JSONL)");
  sim->add_option("--trial", trial, "trial index (seeds the truth stream)");
  CLI::App* trk = app.add_subcommand("track", "run one tracked link and print per-frame metrics");
  trk->add_option("--scheme", scheme_one, "scheme to run");
  trk->add_option("--trial", trial, "trial index");
  CLI::App* swp = app.add_subcommand("sweep", "Monte-Carlo sweep to CSV + JSON sidecar");
  for (CLI::App* s : {sim, trk, swp}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!schemes_csv.empty()) cfg.schemes = parse_schemes(schemes_csv);
    if (!sweep_np.empty()) cfg.sweep_n_p = split_ints(sweep_np);
    if (!sweep_snr.empty()) cfg.sweep_snr_db = split_doubles(sweep_snr);
    if (!sweep_nrx.empty()) cfg.sweep_n_rx = split_ints(sweep_nrx);
    if (sim->parsed()) return do_simulate(cfg, trial);
    if (trk->parsed()) return do_track(cfg, scheme_one, trial);
    return do_sweep(cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ddtrack
