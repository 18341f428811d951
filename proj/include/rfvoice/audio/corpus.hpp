#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rfvoice/audio/clip.hpp"

namespace rfvoice::audio {

enum class NoiseKind { White, Babble, Impulsive, Tonal };

NoiseKind parse_noise_kind(std::string_view name);  // throws ArgumentError
std::string_view to_string(NoiseKind kind);

struct VoiceSpec {
  double pitch_lo_hz = 100.0;
  double pitch_hi_hz = 300.0;
  int harmonics = 24;
  double envelope_rate_lo_hz = 2.0;  // syllables per second
  double envelope_rate_hi_hz = 8.0;
  double peak = 0.5;
};

struct NoiseParams {
  double level_rms = 0.1;
  double click_density_hz = 4.0;  // impulsive: expected clicks per second
  double tone_hz = 1000.0;        // tonal
};

struct CorpusSpec {
  int n_items = 200;
  double duration_s = 5.0;
  double sample_rate_hz = 16000.0;
  VoiceSpec voice;
  std::vector<NoiseKind> noise_kinds;
  NoiseParams noise;
  std::uint64_t seed = 1;

  // duration > 0, pitch range inside [80 Hz, 7 kHz], harmonics >= 1.
  void validate() const;
};

// Deterministic 64-bit seed derivation (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Harmonic complex with a bounded pitch contour, formant-shaped harmonic
// amplitudes and a syllable-rate on/off envelope. Pure in (spec, index).
AudioClip gen_voice(const CorpusSpec& spec, std::uint64_t index);

AudioClip gen_noise(NoiseKind kind, double duration_s, double rate_hz, std::uint64_t seed,
                    const NoiseParams& params = {});

// Click onset times for impulsive noise; gen_noise places a burst at each.
std::vector<double> impulsive_click_times(double duration_s, double density_hz, std::uint64_t seed);

struct ManifestRow {
  std::string path;  // relative to the corpus directory
  std::string role;  // source | noise | mixture
  std::uint64_t seed = 0;
};

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& file);

// Writes sources/ (and noise/ when noise kinds are given) plus manifest.csv.
std::vector<ManifestRow> write_corpus(const CorpusSpec& spec, const std::filesystem::path& dir);

// Item-specific noise kind and parameters used by write_corpus.
NoiseKind corpus_noise_kind(const CorpusSpec& spec, std::uint64_t index);
AudioClip corpus_noise(const CorpusSpec& spec, std::uint64_t index);

}  // namespace rfvoice::audio
