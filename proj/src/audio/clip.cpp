#include "rfvoice/audio/clip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rfvoice/error.hpp"

namespace rfvoice::audio {

void AudioClip::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw DataError("audio clip sample rate must be positive, got " + std::to_string(sample_rate_hz));
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      throw DataError("audio clip sample " + std::to_string(i) + " is not finite");
    }
  }
}

AudioClip mix(std::span<const AudioClip> clips, std::span<const double> gains) {
  if (clips.size() != gains.size()) {
    throw ArgumentError("mix: " + std::to_string(clips.size()) + " clips but " +
                        std::to_string(gains.size()) + " gains");
  }
  if (clips.empty()) throw ArgumentError("mix: no clips");
  const double rate = clips.front().sample_rate_hz;
  std::size_t n = 0;
  for (const auto& c : clips) {
    if (c.sample_rate_hz != rate) {
      throw ArgumentError("mix: sample rate mismatch (" + std::to_string(rate) + " vs " +
                          std::to_string(c.sample_rate_hz) + ")");
    }
    n = std::max(n, c.size());
  }
  AudioClip out = AudioClip::zeros(n, rate);
  for (std::size_t k = 0; k < clips.size(); ++k) {
    const auto& s = clips[k].samples;
    const double g = gains[k];
    for (std::size_t i = 0; i < s.size(); ++i) out.samples[i] += g * s[i];
  }
  return out;
}

double energy(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = std::min(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double peak_abs(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc / static_cast<double>(x.size());
}

double level_db(std::span<const double> x, std::span<const double> ref) {
  const double ex = energy(x);
  const double er = energy(ref);
  if (ex == 0.0) return -std::numeric_limits<double>::infinity();
  if (er == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(ex / er);
}

void peak_normalize(std::vector<double>& x, double peak) {
  const double p = peak_abs(x);
  if (p == 0.0) return;
  const double g = peak / p;
  for (double& v : x) v *= g;
}

AudioClip crop(const AudioClip& clip, std::size_t start, std::size_t length) {
  AudioClip out = AudioClip::zeros(length, clip.sample_rate_hz);
  for (std::size_t i = 0; i < length && start + i < clip.size(); ++i) {
    out.samples[i] = clip.samples[start + i];
  }
  return out;
}

}  // namespace rfvoice::audio
