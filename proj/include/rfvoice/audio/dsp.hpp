#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace rfvoice::dsp {

using cplx = std::complex<double>;

// Forward DFT of a complex sequence, zero-padded (or truncated) to n points.
std::vector<cplx> fft(std::span<const cplx> x, std::size_t n);
// Forward DFT of a real sequence; returns the n/2+1 non-negative bins.
std::vector<cplx> rfft(std::span<const double> x, std::size_t n);
// Inverse of rfft for an n-point real sequence (bins.size() == n/2+1), scaled by 1/n.
std::vector<double> irfft(std::span<const cplx> bins, std::size_t n);

std::size_t next_pow2(std::size_t n);

// Symmetric windows of length n.
std::vector<double> hann(std::size_t n);
std::vector<double> blackman(std::size_t n);
// Zeroth-order modified Bessel function of the first kind.
double bessel_i0(double x);
std::vector<double> kaiser(std::size_t n, double beta);

// Linear-phase FIR taps (odd length). Frequencies in Hz.
std::vector<double> design_lowpass(std::size_t taps, double cutoff_hz, double rate_hz);
std::vector<double> design_bandpass(std::size_t taps, double low_hz, double high_hz, double rate_hz);

// Zero-phase FIR filtering: output[i] aligns with input[i] for odd-length taps.
std::vector<double> filter_centered(std::span<const double> x, std::span<const double> taps);

// Frequency of the largest |X| bin of a complex sequence (Hz), refined with
// parabolic interpolation on the log magnitude. Used by tests and diagnostics.
double peak_frequency(std::span<const cplx> x, double rate_hz, std::size_t nfft = 0);
double peak_frequency_real(std::span<const double> x, double rate_hz, std::size_t nfft = 0);

// Rational polyphase resampler with a Kaiser-windowed sinc kernel.
class Resampler {
 public:
  Resampler(double in_rate_hz, double out_rate_hz, int zero_crossings = 32, double beta = 8.6);

  std::vector<double> process(std::span<const double> x) const;
  std::size_t output_length(std::size_t input_length) const;

  int up() const { return up_; }
  int down() const { return down_; }

 private:
  int up_;
  int down_;
  int half_;  // kernel half width on the upsampled grid
  std::vector<double> kernel_;
};

// One-shot convenience wrapper; identity when rates match.
std::vector<double> resample(std::span<const double> x, double in_rate_hz, double out_rate_hz);

}  // namespace rfvoice::dsp
