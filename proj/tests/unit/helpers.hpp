#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <unistd.h>
#include <vector>

#include "rfvoice/audio/clip.hpp"
#include "rfvoice/log.hpp"

namespace testutil {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline rfvoice::audio::AudioClip sine(double f, double rate, std::size_t n, double amp = 1.0, double phase = 0.0) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = amp * std::sin(kTwoPi * f * static_cast<double>(i) / rate + phase);
  return {std::move(s), rate};
}

inline std::vector<double> gaussian(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

inline std::vector<std::complex<double>> tone_iq(double f, double rate, std::size_t n, double phase = 0.0) {
  std::vector<std::complex<double>> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = std::polar(1.0, kTwoPi * f * static_cast<double>(i) / rate + phase);
  return s;
}

// Direct DTFT magnitude at one frequency.
template <class T>
double dtft_mag(std::span<const T> x, double rate, double f) {
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += std::complex<double>(x[i]) * std::polar(1.0, -kTwoPi * f * static_cast<double>(i) / rate);
  }
  return std::abs(acc);
}

// Frequency of the largest DTFT magnitude in [lo, hi]: coarse grid, then
// golden-section refinement around the best grid point.
template <class T>
double peak_oracle(std::span<const T> x, double rate, double lo, double hi, int grid = 400) {
  const double step = (hi - lo) / grid;
  double best_f = lo, best = -1.0;
  for (int i = 0; i <= grid; ++i) {
    const double f = lo + step * i;
    const double m = dtft_mag(x, rate, f);
    if (m > best) {
      best = m;
      best_f = f;
    }
  }
  double a = best_f - step, b = best_f + step;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 60; ++it) {
    const double c = b - g * (b - a), d = a + g * (b - a);
    if (dtft_mag(x, rate, c) > dtft_mag(x, rate, d)) {
      b = d;
    } else {
      a = c;
    }
  }
  return 0.5 * (a + b);
}

inline double direct_si_sdr(const std::vector<double>& est, const std::vector<double>& ref) {
  long double er = 0, rr = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    er += static_cast<long double>(est[i]) * ref[i];
    rr += static_cast<long double>(ref[i]) * ref[i];
  }
  const long double a = er / rr;
  long double t = 0, e = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const long double s = a * ref[i];
    t += s * s;
    e += (est[i] - s) * (est[i] - s);
  }
  return static_cast<double>(10.0L * std::log10(t / e));
}

inline double correlation(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("rfvoice_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

// Captures warnings for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  rfvoice::log::Sink previous;
  WarningCapture() {
    previous = rfvoice::log::set_warning_sink([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~WarningCapture() { rfvoice::log::set_warning_sink(previous); }
  bool any(const std::string& needle) const {
    for (const auto& m : messages) {
      if (m.find(needle) != std::string::npos) return true;
    }
    return false;
  }
};

}  // namespace testutil
