#include "rfvoice/audio/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>

#include "rfvoice/error.hpp"

namespace rfvoice::dsp {
namespace {

// fftw planning is not thread-safe; execution on distinct buffers is.
std::mutex g_plan_mutex;

struct FftwBuffer {
  fftw_complex* in = nullptr;
  fftw_complex* out = nullptr;
  explicit FftwBuffer(std::size_t n) {
    in = fftw_alloc_complex(n);
    out = fftw_alloc_complex(n);
  }
  ~FftwBuffer() {
    fftw_free(in);
    fftw_free(out);
  }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<cplx> fft(std::span<const cplx> x, std::size_t n) {
  if (n == 0) return {};
  FftwBuffer buf(n);
  fftw_plan plan;
  {
    std::lock_guard lock(g_plan_mutex);
    plan = fftw_plan_dft_1d(static_cast<int>(n), buf.in, buf.out, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  const std::size_t m = std::min(n, x.size());
  for (std::size_t i = 0; i < n; ++i) {
    const cplx v = i < m ? x[i] : cplx{};
    buf.in[i][0] = v.real();
    buf.in[i][1] = v.imag();
  }
  fftw_execute(plan);
  std::vector<cplx> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {buf.out[i][0], buf.out[i][1]};
  {
    std::lock_guard lock(g_plan_mutex);
    fftw_destroy_plan(plan);
  }
  return out;
}

std::vector<cplx> rfft(std::span<const double> x, std::size_t n) {
  if (n == 0) return {};
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(g_plan_mutex);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  const std::size_t m = std::min(n, x.size());
  for (std::size_t i = 0; i < n; ++i) in[i] = i < m ? x[i] : 0.0;
  fftw_execute(plan);
  std::vector<cplx> result(n / 2 + 1);
  for (std::size_t i = 0; i < result.size(); ++i) result[i] = {out[i][0], out[i][1]};
  {
    std::lock_guard lock(g_plan_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return result;
}

std::vector<double> irfft(std::span<const cplx> bins, std::size_t n) {
  if (n == 0) return {};
  if (bins.size() != n / 2 + 1) throw ArgumentError("irfft: expected n/2+1 bins");
  fftw_complex* in = fftw_alloc_complex(n / 2 + 1);
  double* out = fftw_alloc_real(n);
  fftw_plan plan;
  {
    std::lock_guard lock(g_plan_mutex);
    plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < bins.size(); ++i) {
    in[i][0] = bins[i].real();
    in[i][1] = bins[i].imag();
  }
  fftw_execute(plan);
  std::vector<double> result(out, out + n);
  for (auto& v : result) v /= static_cast<double>(n);
  {
    std::lock_guard lock(g_plan_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return result;
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

std::vector<double> blackman(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1);
    w[i] = 0.42 - 0.5 * std::cos(t) + 0.08 * std::cos(2.0 * t);
  }
  return w;
}

double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

std::vector<double> kaiser(std::size_t n, double beta) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  const double denom = bessel_i0(beta);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
    w[i] = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

std::vector<double> design_lowpass(std::size_t taps, double cutoff_hz, double rate_hz) {
  if (taps % 2 == 0) ++taps;
  const auto w = blackman(taps);
  const double fc = cutoff_hz / rate_hz;
  const auto mid = static_cast<double>(taps / 2);
  std::vector<double> h(taps);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    h[i] = 2.0 * fc * sinc(2.0 * fc * (static_cast<double>(i) - mid)) * w[i];
    sum += h[i];
  }
  for (double& v : h) v /= sum;
  return h;
}

std::vector<double> design_bandpass(std::size_t taps, double low_hz, double high_hz, double rate_hz) {
  if (!(low_hz >= 0.0 && low_hz < high_hz && high_hz < rate_hz / 2.0)) {
    throw ArgumentError("design_bandpass: need 0 <= low < high < rate/2");
  }
  if (taps % 2 == 0) ++taps;
  const auto w = blackman(taps);
  const double f1 = low_hz / rate_hz;
  const double f2 = high_hz / rate_hz;
  const auto mid = static_cast<double>(taps / 2);
  std::vector<double> h(taps);
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = static_cast<double>(i) - mid;
    h[i] = (2.0 * f2 * sinc(2.0 * f2 * t) - 2.0 * f1 * sinc(2.0 * f1 * t)) * w[i];
  }
  // Unit gain at the geometric band centre.
  const double fc = std::sqrt(std::max(low_hz, 1.0) * high_hz) / rate_hz;
  cplx resp{};
  for (std::size_t i = 0; i < taps; ++i) {
    resp += h[i] * std::polar(1.0, -2.0 * std::numbers::pi * fc * (static_cast<double>(i) - mid));
  }
  const double g = std::abs(resp);
  for (double& v : h) v /= g;
  return h;
}

std::vector<double> filter_centered(std::span<const double> x, std::span<const double> taps) {
  const std::size_t n = x.size();
  const std::size_t m = taps.size();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(m / 2);
  std::vector<double> y(n, 0.0);
  if (n == 0 || m == 0) return y;
  if (n * m > (1u << 16)) {
    // Long inputs: linear convolution through one zero-padded FFT.
    const std::size_t nfft = next_pow2(n + m - 1);
    auto xf = rfft(x, nfft);
    const auto hf = rfft(taps, nfft);
    for (std::size_t k = 0; k < xf.size(); ++k) xf[k] *= hf[k];
    const auto full = irfft(xf, nfft);
    for (std::size_t i = 0; i < n; ++i) y[i] = full[i + static_cast<std::size_t>(half)];
    return y;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(i);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, center - half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, center + half);
    double acc = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) acc += x[static_cast<std::size_t>(k)] * taps[static_cast<std::size_t>(center - k + half)];
    y[i] = acc;
  }
  return y;
}

namespace {

double interpolate_peak(const std::vector<double>& mag, std::size_t k) {
  const std::size_t n = mag.size();
  const double a = std::log(mag[(k + n - 1) % n] + 1e-300);
  const double b = std::log(mag[k] + 1e-300);
  const double c = std::log(mag[(k + 1) % n] + 1e-300);
  const double denom = a - 2.0 * b + c;
  if (denom == 0.0) return 0.0;
  return std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
}

}  // namespace

double peak_frequency(std::span<const cplx> x, double rate_hz, std::size_t nfft) {
  if (nfft == 0) nfft = next_pow2(x.size()) * 4;
  const auto win = hann(x.size());
  std::vector<cplx> xw(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xw[i] = x[i] * win[i];
  const auto spec = fft(xw, nfft);
  std::vector<double> mag(nfft);
  for (std::size_t i = 0; i < nfft; ++i) mag[i] = std::abs(spec[i]);
  const auto k = static_cast<std::size_t>(std::max_element(mag.begin(), mag.end()) - mag.begin());
  double bin = static_cast<double>(k) + interpolate_peak(mag, k);
  if (bin >= static_cast<double>(nfft) / 2.0) bin -= static_cast<double>(nfft);
  return bin * rate_hz / static_cast<double>(nfft);
}

double peak_frequency_real(std::span<const double> x, double rate_hz, std::size_t nfft) {
  if (nfft == 0) nfft = next_pow2(x.size()) * 4;
  const auto win = hann(x.size());
  std::vector<double> xw(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xw[i] = x[i] * win[i];
  const auto spec = rfft(xw, nfft);
  std::vector<double> mag(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) mag[i] = std::abs(spec[i]);
  const auto k = static_cast<std::size_t>(std::max_element(mag.begin(), mag.end()) - mag.begin());
  double off = 0.0;
  if (k > 0 && k + 1 < mag.size()) off = interpolate_peak(mag, k);
  return (static_cast<double>(k) + off) * rate_hz / static_cast<double>(nfft);
}

Resampler::Resampler(double in_rate_hz, double out_rate_hz, int zero_crossings, double beta) {
  const double ri = std::nearbyint(in_rate_hz);
  const double ro = std::nearbyint(out_rate_hz);
  if (ri != in_rate_hz || ro != out_rate_hz || ri <= 0 || ro <= 0) {
    throw ArgumentError("Resampler: rates must be positive integers in Hz");
  }
  const auto a = static_cast<long long>(ri);
  const auto b = static_cast<long long>(ro);
  const long long g = std::gcd(a, b);
  up_ = static_cast<int>(b / g);
  down_ = static_cast<int>(a / g);
  if (up_ > 4096 || down_ > 4096) throw ArgumentError("Resampler: rate ratio too complex");

  const int grid = std::max(up_, down_);
  half_ = zero_crossings * grid;
  // Transition band centred at 0.98 of the lower Nyquist: passband to ~0.9,
  // aliasing confined above ~0.93 of the lower Nyquist.
  const double cutoff = 0.98 / static_cast<double>(grid);  // 2 fc / upsampled rate
  const auto win = kaiser(static_cast<std::size_t>(2 * half_ + 1), beta);
  kernel_.resize(static_cast<std::size_t>(2 * half_ + 1));
  for (int i = -half_; i <= half_; ++i) {
    const double t = static_cast<double>(i);
    kernel_[static_cast<std::size_t>(i + half_)] = static_cast<double>(up_) * cutoff * sinc(cutoff * t) *
                                                   win[static_cast<std::size_t>(i + half_)];
  }
}

std::size_t Resampler::output_length(std::size_t input_length) const {
  return (input_length * static_cast<std::size_t>(up_) + static_cast<std::size_t>(down_) - 1) /
         static_cast<std::size_t>(down_);
}

std::vector<double> Resampler::process(std::span<const double> x) const {
  const std::size_t n_out = output_length(x.size());
  std::vector<double> y(n_out, 0.0);
  const long long L = up_;
  const long long M = down_;
  const long long H = half_;
  const auto n_in = static_cast<long long>(x.size());
  for (std::size_t m = 0; m < n_out; ++m) {
    const long long u = static_cast<long long>(m) * M;  // position on the upsampled grid
    // Inputs k with |u - k L| <= H.
    long long k_lo = (u - H + L - 1) / L;
    if (u - H < 0) k_lo = -((H - u) / L);
    k_lo = std::max<long long>(k_lo, 0);
    const long long k_hi = std::min<long long>((u + H) / L, n_in - 1);
    double acc = 0.0;
    for (long long k = k_lo; k <= k_hi; ++k) {
      acc += x[static_cast<std::size_t>(k)] * kernel_[static_cast<std::size_t>(u - k * L + H)];
    }
    y[m] = acc;
  }
  return y;
}

std::vector<double> resample(std::span<const double> x, double in_rate_hz, double out_rate_hz) {
  if (in_rate_hz == out_rate_hz) return {x.begin(), x.end()};
  return Resampler(in_rate_hz, out_rate_hz).process(x);
}

}  // namespace rfvoice::dsp
