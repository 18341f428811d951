#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>

#include "rfvoice/audio/wav.hpp"
#include "rfvoice/error.hpp"
#include "rfvoice/harness/pipeline.hpp"
#include "rfvoice/log.hpp"

namespace fs = std::filesystem;
using namespace rfvoice;

namespace {

struct Globals {
  std::string config;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  bool verbose = false;
};

harness::PipelineConfig resolve(const Globals& g) {
  if (g.preset != "desk") throw ArgumentError("unknown preset " + g.preset);
  auto cfg = harness::desk_preset();
  if (!g.config.empty()) cfg = harness::load_config(g.config, cfg);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void print_summary(const harness::PipelineReport& rep) {
  for (const auto& r : rep.summary) std::printf("%-40s %s\n", r.name.c_str(), metrics::format_number(r.value).c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Battery-free backscatter voice capture: simulation, recovery and self-supervised enhancement"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config file (overrides the preset)")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Base preset")->check(CLI::IsMember({"desk"}));
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory (or file for single-file commands)");
  app.add_flag("-v,--verbose", g.verbose, "Progress messages on stderr");

  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic in-domain and out-of-domain corpora");

  auto* sim = app.add_subcommand("simulate", "Voice WAV to received IQ trace, or an SNR sweep");
  std::string sim_in, sim_out;
  std::optional<double> sim_snr;
  double sim_cfo = 0.0, sim_drift = 0.0;
  std::uint64_t sim_noise_seed = 1;
  bool sim_sweep = false;
  sim->add_option("--in", sim_in, "Input voice WAV");
  sim->add_option("--iq", sim_out, "Output IQ path (default <out>.cf32)");
  sim->add_option("--snr-db", sim_snr, "Channel SNR; omit for a noiseless channel");
  sim->add_option("--cfo-hz", sim_cfo, "Carrier frequency offset");
  sim->add_option("--drift-hz-per-s", sim_drift, "Linear CFO drift");
  sim->add_option("--noise-seed", sim_noise_seed, "Channel noise seed");
  sim->add_flag("--sweep", sim_sweep, "Run the channel SNR sweep and write <out>/snr_sweep.csv");

  auto* dem = app.add_subcommand("demod", "IQ trace to recovered 16 kHz WAV");
  std::string dem_in, dem_out;
  dem->add_option("--in", dem_in, "Input IQ path")->required();
  dem->add_option("--wav", dem_out, "Output WAV (default <out>.wav)");

  auto* pre = app.add_subcommand("pretrain", "Run the pipeline up to supervised pretraining");
  auto* tsep = app.add_subcommand("train-sep", "Run the pipeline up to a self-supervised separation round");
  int sep_round = 1;
  tsep->add_option("--round", sep_round, "Separation round")->check(CLI::IsMember({1, 2}));
  auto* tden = app.add_subcommand("train-denoise", "Run the pipeline up to the denoiser phase");
  auto* fb = app.add_subcommand("feedback", "Run the pipeline up to the feedback pool refresh");
  auto* pipe = app.add_subcommand("pipeline", "Run every stage and write the summary table");

  auto* ev = app.add_subcommand("eval", "Score estimate WAVs against same-named reference WAVs");
  std::string ev_est, ev_ref, ev_csv;
  ev->add_option("--est", ev_est, "Estimates directory")->required();
  ev->add_option("--ref", ev_ref, "References directory")->required();
  ev->add_option("--csv", ev_csv, "Report path (default <out>/eval.csv)");

  CLI11_PARSE(app, argc, argv);
  log::set_verbose(g.verbose);

  try {
    const auto cfg = resolve(g);
    const fs::path out = g.out;
    if (gen->parsed()) {
      const auto rows = harness::cmd_gen_corpus(cfg, out / "corpus");
      std::printf("wrote %zu files under %s\n", rows.size(), (out / "corpus").c_str());
    } else if (sim->parsed()) {
      if (sim_sweep) {
        const auto pts = harness::snr_sweep(cfg);
        fs::create_directories(out);
        harness::write_sweep_csv(out / "snr_sweep.csv", pts);
        for (const auto& p : pts) std::printf("snr %6.1f dB  median SI-SDR %8.3f dB\n", p.snr_db, p.median_si_sdr_db);
      } else {
        if (sim_in.empty()) throw ArgumentError("simulate needs --in or --sweep");
        tag::ChannelParams ch;
        ch.snr_db = sim_snr;
        ch.cfo_hz = sim_cfo;
        ch.cfo_drift_hz_per_s = sim_drift;
        ch.seed = sim_noise_seed;
        const fs::path iq = sim_out.empty() ? fs::path(g.out + ".cf32") : fs::path(sim_out);
        if (iq.has_parent_path()) fs::create_directories(iq.parent_path());
        const auto trace = harness::cmd_simulate(cfg, audio::read_wav(sim_in), ch, iq);
        std::printf("wrote %zu IQ samples to %s\n", trace.samples.size(), iq.c_str());
      }
    } else if (dem->parsed()) {
      const fs::path wav = dem_out.empty() ? fs::path(g.out + ".wav") : fs::path(dem_out);
      if (wav.has_parent_path()) fs::create_directories(wav.parent_path());
      const auto clip = harness::cmd_demod(cfg, dem_in, wav);
      std::printf("wrote %zu samples to %s\n", clip.size(), wav.c_str());
    } else if (pre->parsed()) {
      harness::run_until(cfg, out, "pretrain");
    } else if (tsep->parsed()) {
      harness::run_until(cfg, out, sep_round == 1 ? "sep-round1" : "sep-round2");
    } else if (tden->parsed()) {
      harness::run_until(cfg, out, "denoise");
    } else if (fb->parsed()) {
      harness::run_until(cfg, out, "feedback");
    } else if (pipe->parsed()) {
      print_summary(harness::cmd_pipeline(cfg, out));
    } else if (ev->parsed()) {
      const fs::path csv = ev_csv.empty() ? out / "eval.csv" : fs::path(ev_csv);
      if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
      const auto rep = harness::cmd_eval(ev_est, ev_ref, csv);
      std::printf("scored %zu pairs, report in %s\n", rep.items.size(), csv.c_str());
    }
  } catch (const harness::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
