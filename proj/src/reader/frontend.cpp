#include "rfvoice/reader/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rfvoice/audio/dsp.hpp"
#include "rfvoice/error.hpp"

namespace rfvoice::reader {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kMinFrame = 1024;

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

// Welch-averaged power spectrum, 1024-point Hann segments, 50 % overlap.
std::vector<double> welch_psd(std::span<const cplx> x) {
  const std::size_t seg = kMinFrame;
  const auto win = dsp::hann(seg);
  std::vector<double> psd(seg, 0.0);
  std::size_t count = 0;
  std::vector<cplx> buf(seg);
  for (std::size_t start = 0; start + seg <= x.size(); start += seg / 2) {
    for (std::size_t i = 0; i < seg; ++i) buf[i] = x[start + i] * win[i];
    const auto spec = dsp::fft(buf, seg);
    for (std::size_t i = 0; i < seg; ++i) psd[i] += std::norm(spec[i]);
    ++count;
  }
  for (double& p : psd) p /= static_cast<double>(count);
  return psd;
}

}  // namespace

void DemodConfig::validate() const {
  if (delta_samples < 1) throw ArgumentError("DemodConfig: delta_samples must be >= 1");
  if (!(frame_len_s > 0.0)) throw ArgumentError("DemodConfig: frame_len_s must be > 0");
  if (!(audio_rate_hz > 0.0)) throw ArgumentError("DemodConfig: audio_rate_hz must be > 0");
  if (!(band_low_hz >= 0.0 && band_low_hz < band_high_hz && band_high_hz < audio_rate_hz / 2.0)) {
    throw ArgumentError("DemodConfig: need 0 <= band_low < band_high < audio_rate/2");
  }
  if (!(cfo_search_hz > 0.0)) throw ArgumentError("DemodConfig: cfo_search_hz must be > 0");
  if (bandpass_taps < 3) throw ArgumentError("DemodConfig: bandpass_taps must be >= 3");
  if (!(silence_floor_hz >= 0.0)) throw ArgumentError("DemodConfig: silence_floor_hz must be >= 0");
}

double estimate_cfo(std::span<const cplx> frame, double sample_rate_hz, const DemodConfig& cfg) {
  if (frame.size() < kMinFrame) {
    throw ArgumentError("estimate_cfo: frame has " + std::to_string(frame.size()) + " samples, need >= 1024");
  }
  const auto psd = welch_psd(frame);
  const double peak_psd = *std::max_element(psd.begin(), psd.end());
  const double median_psd = median(psd);
  if (!(peak_psd > 0.0) || (median_psd > 0.0 && peak_psd / median_psd < std::pow(10.0, 0.6))) {
    throw NoCarrierError("estimate_cfo: no carrier (peak-to-median spectral ratio below 6 dB)");
  }

  const std::size_t nfft = dsp::next_pow2(frame.size()) * 4;
  const auto win = dsp::hann(frame.size());
  std::vector<cplx> xw(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) xw[i] = frame[i] * win[i];
  const auto spec = dsp::fft(xw, nfft);

  // Bins inside the search band around the nominal IF, in frequency order.
  const double df = sample_rate_hz / static_cast<double>(nfft);
  const auto lo = static_cast<long long>(std::ceil((cfg.if_center_hz - cfg.cfo_search_hz) / df));
  const auto hi = static_cast<long long>(std::floor((cfg.if_center_hz + cfg.cfo_search_hz) / df));
  const auto n = static_cast<long long>(nfft);
  auto power_at = [&](long long b) { return std::norm(spec[static_cast<std::size_t>(((b % n) + n) % n)]); };

  long long peak = lo;
  double peak_power = -1.0;
  for (long long b = lo; b <= hi; ++b) {
    const double p = power_at(b);
    if (p > peak_power) {
      peak_power = p;
      peak = b;
    }
  }
  if (!(peak_power > 0.0)) throw NoCarrierError("estimate_cfo: no power in the search band");

  // Main lobe of a Hann window spans +-2 original bins = +-8 padded bins.
  const long long lobe = 8;
  double lobe_power = 0.0, band_power = 0.0, weighted = 0.0, weight = 0.0;
  const double floor = peak_power * 1e-4;
  for (long long b = lo; b <= hi; ++b) {
    const double p = power_at(b);
    band_power += p;
    if (std::llabs(b - peak) <= lobe) lobe_power += p;
    // Soft floor: weights stay continuous as bins cross it.
    if (p > floor) {
      weighted += (p - floor) * static_cast<double>(b);
      weight += p - floor;
    }
  }

  double freq;
  if (lobe_power >= 0.9 * band_power) {
    const double a = std::log(power_at(peak - 1) + 1e-300);
    const double b = std::log(peak_power);
    const double c = std::log(power_at(peak + 1) + 1e-300);
    const double denom = a - 2.0 * b + c;
    const double off = denom != 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
    freq = (static_cast<double>(peak) + off) * df;
  } else {
    freq = weighted / weight * df;
  }
  return freq - cfg.if_center_hz;
}

CfoTrack estimate_cfo_track(const IQTrace& iq, const DemodConfig& cfg) {
  cfg.validate();
  iq.validate();
  const auto frame = std::max<std::size_t>(kMinFrame, static_cast<std::size_t>(std::llround(cfg.frame_len_s * iq.sample_rate_hz)));
  CfoTrack track;
  double last = 0.0;
  for (std::size_t start = 0; start < iq.size(); start += frame) {
    std::size_t len = std::min(frame, iq.size() - start);
    // Fold a short tail into the previous segment.
    if (len < kMinFrame && !track.empty()) {
      track.back().length += len;
      break;
    }
    double cfo = last;
    if (len >= kMinFrame) {
      try {
        cfo = estimate_cfo(std::span(iq.samples).subspan(start, len), iq.sample_rate_hz, cfg);
      } catch (const NoCarrierError&) {
        cfo = last;
      }
    }
    track.push_back({start, len, cfo});
    last = cfo;
  }
  return track;
}

CfoTrack constant_track(const IQTrace& iq, double cfo_hz) { return {{0, iq.size(), cfo_hz}}; }

IQTrace compensate_cfo(const IQTrace& iq, const CfoTrack& track) {
  IQTrace out = iq;
  std::size_t covered = 0;
  for (const auto& seg : track) {
    if (seg.start != covered) throw ArgumentError("compensate_cfo: track has gaps or overlaps");
    covered += seg.length;
  }
  if (covered != iq.size()) throw ArgumentError("compensate_cfo: track does not cover the trace");

  double phase = 0.0;
  for (const auto& seg : track) {
    const double step = kTwoPi * seg.cfo_hz / iq.sample_rate_hz;
    for (std::size_t k = seg.start; k < seg.start + seg.length; ++k) {
      if (phase != 0.0) out.samples[k] = iq.samples[k] * std::polar(1.0, -phase);
      phase = std::remainder(phase + step, kTwoPi);
    }
  }
  return out;
}

audio::AudioClip fm_demodulate(const IQTrace& iq, const DemodConfig& cfg) {
  if (cfg.delta_samples < 1) throw ArgumentError("fm_demodulate: delta_samples must be >= 1");
  const auto delta = static_cast<std::size_t>(cfg.delta_samples);
  if (delta >= iq.size()) throw ArgumentError("fm_demodulate: delta_samples must be shorter than the trace");
  const double scale = iq.sample_rate_hz / (kTwoPi * static_cast<double>(delta));
  audio::AudioClip out = audio::AudioClip::zeros(iq.size() - delta, iq.sample_rate_hz);
  for (std::size_t k = 0; k + delta < iq.size(); ++k) {
    // arg(r[k+d] conj(r[k])) is the phase difference wrapped to (-pi, pi].
    const double dphi = std::arg(iq.samples[k + delta] * std::conj(iq.samples[k]));
    out.samples[k] = scale * dphi - iq.if_center_hz;
  }
  return out;
}

audio::AudioClip align_demodulated(const audio::AudioClip& x, int delta_samples) {
  if (x.empty()) return x;
  const auto delta = static_cast<std::size_t>(delta_samples);
  const std::size_t lead = (delta + 1) / 2;
  const std::size_t tail = delta - lead;
  audio::AudioClip out;
  out.sample_rate_hz = x.sample_rate_hz;
  out.samples.reserve(x.size() + delta);
  out.samples.insert(out.samples.end(), lead, x.samples.front());
  out.samples.insert(out.samples.end(), x.samples.begin(), x.samples.end());
  out.samples.insert(out.samples.end(), tail, x.samples.back());
  return out;
}

audio::AudioClip band_limit(const audio::AudioClip& x, const DemodConfig& cfg) {
  cfg.validate();
  auto y = dsp::resample(x.samples, x.sample_rate_hz, cfg.audio_rate_hz);
  const auto taps = dsp::design_bandpass(static_cast<std::size_t>(cfg.bandpass_taps), cfg.band_low_hz,
                                         cfg.band_high_hz, cfg.audio_rate_hz);
  return {dsp::filter_centered(y, taps), cfg.audio_rate_hz};
}

audio::AudioClip postprocess(const audio::AudioClip& x, const DemodConfig& cfg) {
  cfg.validate();
  audio::AudioClip centered = x;
  const double m = audio::mean(centered.samples);
  for (double& v : centered.samples) v -= m;
  auto out = band_limit(centered, cfg);
  if (audio::peak_abs(out.samples) > cfg.silence_floor_hz) audio::peak_normalize(out.samples, 0.9);
  return out;
}

Recovered recover_voice(const IQTrace& iq, const DemodConfig& cfg) {
  Recovered r;
  r.track = estimate_cfo_track(iq, cfg);
  const auto compensated = compensate_cfo(iq, r.track);
  const auto demod = align_demodulated(fm_demodulate(compensated, cfg), cfg.delta_samples);
  r.audio = postprocess(demod, cfg);
  return r;
}

}  // namespace rfvoice::reader
