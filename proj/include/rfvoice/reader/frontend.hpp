#pragma once

#include <span>
#include <vector>

#include "rfvoice/audio/clip.hpp"
#include "rfvoice/tag/tag_sim.hpp"

namespace rfvoice::reader {

using tag::cplx;
using tag::IQTrace;

struct DemodConfig {
  double frame_len_s = 0.1;       // CFO tracking frame
  int delta_samples = 1;          // phase-difference lag
  double if_center_hz = 40000.0;
  double audio_rate_hz = 16000.0;
  double band_low_hz = 80.0;
  double band_high_hz = 7000.0;
  double cfo_search_hz = 15000.0; // half-width of the CFO search band around the IF
  int bandpass_taps = 1501;
  // Demodulated peaks below this (Hz of deviation) are left unscaled, so a
  // silent tag stays near silent instead of amplifying rounding noise.
  double silence_floor_hz = 1.0;

  void validate() const;  // throws ArgumentError
};

// Offset (Hz) of the frame's dominant spectral component from the IF. A
// tone-like spectrum uses the parabolically interpolated peak of a 4x
// zero-padded FFT; a spread (modulated) spectrum uses the power centroid of
// bins within 40 dB of the peak. Needs >= 1024 samples. Throws
// NoCarrierError when the Welch peak-to-median ratio is below 6 dB.
double estimate_cfo(std::span<const cplx> frame, double sample_rate_hz, const DemodConfig& cfg);

struct CfoSegment {
  std::size_t start = 0;
  std::size_t length = 0;
  double cfo_hz = 0.0;
};
using CfoTrack = std::vector<CfoSegment>;

// Piecewise-constant track over frames of cfg.frame_len_s. A frame with
// no carrier inherits the previous estimate (0 Hz before any estimate).
CfoTrack estimate_cfo_track(const IQTrace& iq, const DemodConfig& cfg);

// Constant track of one segment covering the trace.
CfoTrack constant_track(const IQTrace& iq, double cfo_hz);

// De-rotates each segment by its offset with one running phase accumulator.
IQTrace compensate_cfo(const IQTrace& iq, const CfoTrack& track);

// Instantaneous frequency minus the IF, in Hz, from the wrapped phase
// difference over delta_samples. Output length = input length - delta.
// Throws ArgumentError when delta >= trace length.
audio::AudioClip fm_demodulate(const IQTrace& iq, const DemodConfig& cfg);

// Re-centres demodulator output so sample k describes IQ sample k again;
// output length equals the IQ length.
audio::AudioClip align_demodulated(const audio::AudioClip& x, int delta_samples);

// Mean removal, resampling to the audio rate, band-pass, peak 0.9.
audio::AudioClip postprocess(const audio::AudioClip& x, const DemodConfig& cfg);

// Resampling to the audio rate and the same band-pass, no normalization.
// Produces references comparable with postprocess output.
audio::AudioClip band_limit(const audio::AudioClip& x, const DemodConfig& cfg);

struct Recovered {
  audio::AudioClip audio;
  CfoTrack track;
};

// estimate_cfo_track -> compensate_cfo -> fm_demodulate -> align -> postprocess.
Recovered recover_voice(const IQTrace& iq, const DemodConfig& cfg);

}  // namespace rfvoice::reader
