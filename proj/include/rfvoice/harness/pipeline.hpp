#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rfvoice/error.hpp"
#include "rfvoice/harness/config.hpp"
#include "rfvoice/metrics/metrics.hpp"

namespace rfvoice::harness {

// Stage failure; what() carries "[stage] message".
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& msg) : Error("[" + stage + "] " + msg), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// One two-speaker recording with generator-side ground truth.
struct Recording {
  audio::AudioClip mixture;              // recovered at the reader
  std::vector<audio::AudioClip> sources; // band-limited clean sources
  audio::AudioClip noise;                // band-limited acoustic noise
};

struct NoisyClip {
  audio::AudioClip noisy;  // recovered at the reader
  audio::AudioClip clean;  // band-limited clean voice
  audio::AudioClip noise;  // band-limited acoustic noise
};

// Writes the in-domain and out-of-domain corpora under dir.
std::vector<audio::ManifestRow> cmd_gen_corpus(const PipelineConfig& cfg, const std::filesystem::path& dir);

// Voice (normalized pressure) -> tag -> channel -> IQ file.
tag::IQTrace cmd_simulate(const PipelineConfig& cfg, const audio::AudioClip& voice, const tag::ChannelParams& ch,
                          const std::filesystem::path& iq_out);
// IQ file -> recovered 16 kHz WAV.
audio::AudioClip cmd_demod(const PipelineConfig& cfg, const std::filesystem::path& iq_in,
                           const std::filesystem::path& wav_out);

// End-to-end recovered SI-SDR of clean voices at each sweep SNR (median over clips).
struct SweepPoint {
  double snr_db = 0.0;
  double median_si_sdr_db = 0.0;
};
std::vector<SweepPoint> snr_sweep(const PipelineConfig& cfg);
void write_sweep_csv(const std::filesystem::path& file, const std::vector<SweepPoint>& pts);

struct SummaryRow {
  std::string name;
  double value = 0.0;
};

struct PipelineReport {
  std::vector<SummaryRow> summary;
  double max_consistency_error = 0.0;  // over every forward pass of every stage
  double max_shuffle_sum_error = 0.0;  // relative, over every denoise step
  double value(const std::string& name) const;  // throws ArgumentError when absent
  bool has(const std::string& name) const;
};

// gen-corpus -> acquire (simulate + demod) -> pretrain -> sep round 1 ->
// den phase -> feedback -> sep round 2 -> eval. Completed stages leave a
// marker under out/stages and are skipped on rerun. Writes summary.csv,
// report.json, per-stage metric CSVs and training logs.
PipelineReport cmd_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out);

// Individual pipeline phases on an existing run directory (each runs its
// prerequisites as needed).
void run_until(const PipelineConfig& cfg, const std::filesystem::path& out, const std::string& last_stage);
const std::vector<std::string>& stage_names();

// Pairs files by name; missing counterparts are warned about and skipped.
metrics::MetricReport cmd_eval(const std::filesystem::path& est_dir, const std::filesystem::path& ref_dir,
                               const std::filesystem::path& csv_out);

// Fraction of mixture power explained by the acoustic-noise components in a
// least-squares fit of `mixture` onto `components` (noise flags select which
// components count as noise).
double residual_noise_fraction(std::span<const double> mixture, const std::vector<std::vector<double>>& components,
                               const std::vector<bool>& is_noise);

}  // namespace rfvoice::harness
