#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rfvoice::audio {

// Real-valued sampled waveform. The unit depends on the stage: normalized
// pressure, volts, or Hz of frequency deviation after demodulation.
struct AudioClip {
  std::vector<double> samples;
  double sample_rate_hz = 16000.0;

  AudioClip() = default;
  AudioClip(std::vector<double> s, double rate) : samples(std::move(s)), sample_rate_hz(rate) {}

  static AudioClip zeros(std::size_t n, double rate) { return {std::vector<double>(n, 0.0), rate}; }

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
  std::span<const double> view() const { return samples; }

  // Throws DataError for a non-positive rate or any non-finite sample.
  void validate() const;
};

// Sample-wise weighted sum. Shorter clips are zero-padded to the longest.
// Throws ArgumentError on a rate mismatch or a gains/clips count mismatch.
AudioClip mix(std::span<const AudioClip> clips, std::span<const double> gains);

double energy(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double peak_abs(std::span<const double> x);
double mean(std::span<const double> x);

// Power ratio in dB of `x` relative to `ref`; -inf for silent x.
double level_db(std::span<const double> x, std::span<const double> ref);

// Scale `x` so its peak magnitude is `peak`. All-zero input stays zero.
void peak_normalize(std::vector<double>& x, double peak);

// Contiguous segment [start, start+length) zero-padded past the end.
AudioClip crop(const AudioClip& clip, std::size_t start, std::size_t length);

}  // namespace rfvoice::audio
