#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rfvoice/audio/clip.hpp"

namespace rfvoice::metrics {

// Returned by si_sdr when the estimate is an exact multiple of the reference.
inline constexpr double kPerfect = std::numeric_limits<double>::infinity();
// Aggregates clamp per-item SI-SDR to +-kAggregateCapDb.
inline constexpr double kAggregateCapDb = 60.0;

// 10 log10(|a ref|^2 / |est - a ref|^2), a = <est,ref>/|ref|^2. Returns
// kPerfect when the residual energy is below 1e-20 of the target energy.
// Throws ArgumentError for unequal lengths or an all-zero reference.
double si_sdr(std::span<const double> est, std::span<const double> ref);
double si_sdr(const audio::AudioClip& est, const audio::AudioClip& ref);

// -10 log10(|ref|^2 / (|ref - est|^2 + 10^(-cap/10) |ref|^2)). Bounded below
// by -cap_db. `grad`, when non-empty, receives d loss / d est.
double neg_snr_loss(std::span<const double> est, std::span<const double> ref, double cap_db = 25.0,
                    std::span<double> grad = {});

// Scale-invariant variant used as the training objective: the soft-capped
// negative SNR of est against the projected target a*ref. A 1e-12 floor on
// numerator and denominator keeps it finite when est is orthogonal to ref.
double neg_si_sdr_loss(std::span<const double> est, std::span<const double> ref, double cap_db = 25.0,
                       std::span<double> grad = {});

struct LlrOptions {
  int lpc_order = 10;
  double frame_s = 0.025;
  double hop_s = 0.010;
  double silence_db = -40.0;  // clean frames this far below the loudest are skipped
  double keep_fraction = 0.95;
};

// Linear-prediction coefficients a[0..order] with a[0] = 1 from the
// autocorrelation lags r[0..order] (Levinson-Durbin).
std::vector<double> levinson(std::span<const double> r, int order);

// Per-frame log-likelihood ratios (non-silent clean frames only).
std::vector<double> llr_frames(std::span<const double> est, std::span<const double> ref, double rate_hz,
                               const LlrOptions& opt = {});
// Mean of the lowest keep_fraction of frame values. Throws when every frame is silent.
double llr(const audio::AudioClip& est, const audio::AudioClip& ref, const LlrOptions& opt = {});

// Short-time objective intelligibility (10 kHz internal rate, 15 third-octave
// bands from 150 Hz, 384 ms segments, -15 dB clipping, silent-frame removal).
// Throws ArgumentError when fewer than one segment of frames remains.
double stoi(const audio::AudioClip& est, const audio::AudioClip& ref);

struct ItemMetrics {
  std::string id;
  double si_sdr_db = 0.0;
  double llr = 0.0;
  double stoi = 0.0;
};

struct Aggregate {
  double si_sdr_db = 0.0;
  double llr = 0.0;
  double stoi = 0.0;
};

struct MetricReport {
  std::vector<ItemMetrics> items;

  Aggregate median() const;
  Aggregate mean() const;
  // id,si_sdr_db,llr,stoi rows plus "median" and "mean" aggregate rows.
  void write_csv(const std::filesystem::path& file) const;
};

// All three metrics for one (estimate, reference) pair. LLR/STOI failures
// (all-silent, too short) are recorded as NaN and skipped in aggregates.
ItemMetrics evaluate(const std::string& id, const audio::AudioClip& est, const audio::AudioClip& ref);

// CSV number formatting shared by every report writer: fixed 6 decimals,
// "inf"/"-inf"/"nan" for non-finite values.
std::string format_number(double v);

}  // namespace rfvoice::metrics
