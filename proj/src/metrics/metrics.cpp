#include "rfvoice/metrics/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "rfvoice/audio/dsp.hpp"
#include "rfvoice/error.hpp"

namespace rfvoice::metrics {
namespace {

constexpr double kDbPerNeper = 10.0 / std::numbers::ln10;  // d(10 log10 x)/dx = kDbPerNeper / x
constexpr double kFloor = 1e-12;

void check_pair(std::span<const double> est, std::span<const double> ref, const char* who) {
  if (est.size() != ref.size()) {
    throw ArgumentError(std::string(who) + ": length mismatch (" + std::to_string(est.size()) + " vs " +
                        std::to_string(ref.size()) + ")");
  }
}

double energy_of(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

double dot_of(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

double si_sdr(std::span<const double> est, std::span<const double> ref) {
  check_pair(est, ref, "si_sdr");
  const double r_energy = energy_of(ref);
  if (r_energy == 0.0) throw ArgumentError("si_sdr: all-zero reference");
  const double alpha = dot_of(est, ref) / r_energy;
  double target = 0.0, resid = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = alpha * ref[i];
    const double e = est[i] - t;
    target += t * t;
    resid += e * e;
  }
  if (resid <= 1e-20 * target) return kPerfect;
  return 10.0 * std::log10(target / resid);
}

double si_sdr(const audio::AudioClip& est, const audio::AudioClip& ref) {
  if (est.sample_rate_hz != ref.sample_rate_hz) throw ArgumentError("si_sdr: sample rate mismatch");
  return si_sdr(est.view(), ref.view());
}

double neg_snr_loss(std::span<const double> est, std::span<const double> ref, double cap_db, std::span<double> grad) {
  check_pair(est, ref, "neg_snr_loss");
  const double r_energy = energy_of(ref);
  if (r_energy == 0.0) throw ArgumentError("neg_snr_loss: all-zero reference");
  const double tau = std::pow(10.0, -cap_db / 10.0);
  double err = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double d = ref[i] - est[i];
    err += d * d;
  }
  const double denom = err + tau * r_energy;
  if (!grad.empty()) {
    const double s = kDbPerNeper * 2.0 / denom;
    for (std::size_t i = 0; i < est.size(); ++i) grad[i] = s * (est[i] - ref[i]);
  }
  return -10.0 * std::log10(r_energy / denom);
}

double neg_si_sdr_loss(std::span<const double> est, std::span<const double> ref, double cap_db, std::span<double> grad) {
  check_pair(est, ref, "neg_si_sdr_loss");
  const double r_energy = energy_of(ref);
  if (r_energy == 0.0) throw ArgumentError("neg_si_sdr_loss: all-zero reference");
  const double tau = std::pow(10.0, -cap_db / 10.0);
  const double a = dot_of(est, ref) / r_energy;
  double resid = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double d = a * ref[i] - est[i];
    resid += d * d;
  }
  const double target = a * a * r_energy;
  const double num = target + kFloor;
  const double den = resid + tau * target + kFloor;
  if (!grad.empty()) {
    // den = |e|^2 - (1 - tau) a^2 R + floor, num = a^2 R + floor, da/de = ref / R.
    for (std::size_t i = 0; i < est.size(); ++i) {
      const double d_den = 2.0 * est[i] - 2.0 * (1.0 - tau) * a * ref[i];
      const double d_num = 2.0 * a * ref[i];
      grad[i] = kDbPerNeper * (d_den / den - d_num / num);
    }
  }
  return 10.0 * std::log10(den) - 10.0 * std::log10(num);
}

std::vector<double> levinson(std::span<const double> r, int order) {
  std::vector<double> a(static_cast<std::size_t>(order + 1), 0.0);
  a[0] = 1.0;
  double err = r[0];
  if (!(err > 0.0)) return a;
  std::vector<double> prev(a.size());
  for (int i = 1; i <= order; ++i) {
    double acc = r[static_cast<std::size_t>(i)];
    for (int j = 1; j < i; ++j) acc += a[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(i - j)];
    const double k = -acc / err;
    prev = a;
    for (int j = 1; j < i; ++j) a[static_cast<std::size_t>(j)] = prev[static_cast<std::size_t>(j)] + k * prev[static_cast<std::size_t>(i - j)];
    a[static_cast<std::size_t>(i)] = k;
    err *= (1.0 - k * k);
    if (!(err > 0.0)) break;
  }
  return a;
}

namespace {

std::vector<double> autocorr(std::span<const double> x, int order) {
  std::vector<double> r(static_cast<std::size_t>(order + 1), 0.0);
  for (int lag = 0; lag <= order; ++lag) {
    double acc = 0.0;
    for (std::size_t i = static_cast<std::size_t>(lag); i < x.size(); ++i) acc += x[i] * x[i - static_cast<std::size_t>(lag)];
    r[static_cast<std::size_t>(lag)] = acc;
  }
  return r;
}

// a R a^T for the symmetric Toeplitz matrix built from lags r.
double toeplitz_form(std::span<const double> a, std::span<const double> r) {
  double acc = 0.0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) acc += a[i] * r[i > j ? i - j : j - i] * a[j];
  }
  return acc;
}

}  // namespace

std::vector<double> llr_frames(std::span<const double> est, std::span<const double> ref, double rate_hz,
                               const LlrOptions& opt) {
  check_pair(est, ref, "llr");
  const auto len = static_cast<std::size_t>(std::llround(opt.frame_s * rate_hz));
  const auto hop = static_cast<std::size_t>(std::llround(opt.hop_s * rate_hz));
  if (len == 0 || hop == 0) throw ArgumentError("llr: frame and hop must be >= 1 sample");
  const auto win = dsp::hann(len);

  struct Frame {
    std::vector<double> r_ref, r_est;
  };
  std::vector<Frame> frames;
  double max_energy = 0.0;
  std::vector<double> xr(len), xe(len);
  for (std::size_t start = 0; start + len <= ref.size(); start += hop) {
    for (std::size_t i = 0; i < len; ++i) {
      xr[i] = ref[start + i] * win[i];
      xe[i] = est[start + i] * win[i];
    }
    Frame f{autocorr(xr, opt.lpc_order), autocorr(xe, opt.lpc_order)};
    max_energy = std::max(max_energy, f.r_ref[0]);
    frames.push_back(std::move(f));
  }
  std::vector<double> values;
  const double threshold = max_energy * std::pow(10.0, opt.silence_db / 10.0);
  for (const auto& f : frames) {
    if (!(f.r_ref[0] > threshold) || f.r_ref[0] == 0.0) continue;
    const auto a_ref = levinson(f.r_ref, opt.lpc_order);
    const auto a_est = levinson(f.r_est, opt.lpc_order);
    const double num = toeplitz_form(a_est, f.r_ref);
    const double den = toeplitz_form(a_ref, f.r_ref);
    if (!(den > 0.0)) continue;
    values.push_back(std::max(0.0, std::log(num / den)));
  }
  return values;
}

double llr(const audio::AudioClip& est, const audio::AudioClip& ref, const LlrOptions& opt) {
  if (est.sample_rate_hz != ref.sample_rate_hz) throw ArgumentError("llr: sample rate mismatch");
  auto values = llr_frames(est.view(), ref.view(), ref.sample_rate_hz, opt);
  if (values.empty()) throw ArgumentError("llr: every frame is silent");
  std::sort(values.begin(), values.end());
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.keep_fraction * static_cast<double>(values.size()))));
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) acc += values[i];
  return acc / static_cast<double>(keep);
}

namespace {

constexpr double kStoiRate = 10000.0;
constexpr std::size_t kStoiFrame = 256;
constexpr std::size_t kStoiFft = 512;
constexpr std::size_t kStoiBands = 15;
constexpr double kStoiMinFreq = 150.0;
constexpr std::size_t kStoiSegment = 30;
constexpr double kStoiBeta = -15.0;
constexpr double kStoiDynRange = 40.0;
constexpr double kEps = std::numeric_limits<double>::epsilon();

std::vector<double> stoi_window() {
  // Hann of length N+2 without its zero end points.
  const auto w = dsp::hann(kStoiFrame + 2);
  return {w.begin() + 1, w.end() - 1};
}

void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const auto w = stoi_window();
  const std::size_t hop = kStoiFrame / 2;
  std::vector<std::vector<double>> xf, yf;
  std::vector<double> energies;
  for (std::size_t i = 0; i + kStoiFrame <= x.size(); i += hop) {
    std::vector<double> a(kStoiFrame), b(kStoiFrame);
    double e = 0.0;
    for (std::size_t k = 0; k < kStoiFrame; ++k) {
      a[k] = w[k] * x[i + k];
      b[k] = w[k] * y[i + k];
      e += a[k] * a[k];
    }
    energies.push_back(20.0 * std::log10(std::sqrt(e) + kEps));
    xf.push_back(std::move(a));
    yf.push_back(std::move(b));
  }
  const double max_e = energies.empty() ? 0.0 : *std::max_element(energies.begin(), energies.end());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    if (max_e - kStoiDynRange - energies[i] < 0.0) keep.push_back(i);
  }
  const std::size_t out_len = keep.empty() ? 0 : (keep.size() + 1) * hop;
  std::vector<double> xs(out_len, 0.0), ys(out_len, 0.0);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    for (std::size_t k = 0; k < kStoiFrame; ++k) {
      xs[j * hop + k] += xf[keep[j]][k];
      ys[j * hop + k] += yf[keep[j]][k];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

// Power spectrogram, frames x bins.
std::vector<std::vector<double>> power_stft(const std::vector<double>& x) {
  const auto w = stoi_window();
  const std::size_t hop = kStoiFrame / 2;
  std::vector<std::vector<double>> out;
  std::vector<double> buf(kStoiFrame);
  for (std::size_t i = 0; i + kStoiFrame < x.size(); i += hop) {
    for (std::size_t k = 0; k < kStoiFrame; ++k) buf[k] = w[k] * x[i + k];
    const auto spec = dsp::rfft(buf, kStoiFft);
    std::vector<double> p(spec.size());
    for (std::size_t b = 0; b < spec.size(); ++b) p[b] = std::norm(spec[b]);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> third_octave_bins() {
  const std::size_t n_bins = kStoiFft / 2 + 1;
  std::vector<double> f(n_bins);
  for (std::size_t i = 0; i < n_bins; ++i) f[i] = kStoiRate * static_cast<double>(i) / static_cast<double>(kStoiFft);
  auto nearest = [&](double target) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n_bins; ++i) {
      if ((f[i] - target) * (f[i] - target) < (f[best] - target) * (f[best] - target)) best = i;
    }
    return best;
  };
  std::vector<std::pair<std::size_t, std::size_t>> bands;
  for (std::size_t k = 0; k < kStoiBands; ++k) {
    const double kk = static_cast<double>(k);
    const double lo = kStoiMinFreq * std::pow(2.0, (2.0 * kk - 1.0) / 6.0);
    const double hi = kStoiMinFreq * std::pow(2.0, (2.0 * kk + 1.0) / 6.0);
    bands.emplace_back(nearest(lo), nearest(hi));
  }
  return bands;
}

}  // namespace

double stoi(const audio::AudioClip& est, const audio::AudioClip& ref) {
  if (est.size() != ref.size()) throw ArgumentError("stoi: length mismatch");
  if (est.sample_rate_hz != ref.sample_rate_hz) throw ArgumentError("stoi: sample rate mismatch");
  auto x = dsp::resample(ref.samples, ref.sample_rate_hz, kStoiRate);
  auto y = dsp::resample(est.samples, est.sample_rate_hz, kStoiRate);
  remove_silent_frames(x, y);
  const auto xs = power_stft(x);
  const auto ys = power_stft(y);
  if (xs.size() < kStoiSegment) {
    throw ArgumentError("stoi: clip shorter than one 384 ms analysis segment after silence removal");
  }
  const auto bands = third_octave_bins();
  const std::size_t n_frames = xs.size();
  std::vector<std::vector<double>> xt(kStoiBands, std::vector<double>(n_frames)), yt = xt;
  for (std::size_t j = 0; j < kStoiBands; ++j) {
    for (std::size_t m = 0; m < n_frames; ++m) {
      double ax = 0.0, ay = 0.0;
      for (std::size_t b = bands[j].first; b < bands[j].second; ++b) {
        ax += xs[m][b];
        ay += ys[m][b];
      }
      xt[j][m] = std::sqrt(ax);
      yt[j][m] = std::sqrt(ay);
    }
  }
  const double clip = std::pow(10.0, -kStoiBeta / 20.0);
  double total = 0.0;
  std::size_t count = 0;
  std::array<double, kStoiSegment> xseg{}, yseg{};
  for (std::size_t m = kStoiSegment; m <= n_frames; ++m) {
    for (std::size_t j = 0; j < kStoiBands; ++j) {
      double nx = 0.0, ny = 0.0;
      for (std::size_t t = 0; t < kStoiSegment; ++t) {
        xseg[t] = xt[j][m - kStoiSegment + t];
        yseg[t] = yt[j][m - kStoiSegment + t];
        nx += xseg[t] * xseg[t];
        ny += yseg[t] * yseg[t];
      }
      const double norm_const = std::sqrt(nx) / (std::sqrt(ny) + kEps);
      double mx = 0.0, my = 0.0;
      for (std::size_t t = 0; t < kStoiSegment; ++t) {
        yseg[t] = std::min(yseg[t] * norm_const, xseg[t] * (1.0 + clip));
        mx += xseg[t];
        my += yseg[t];
      }
      mx /= static_cast<double>(kStoiSegment);
      my /= static_cast<double>(kStoiSegment);
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (std::size_t t = 0; t < kStoiSegment; ++t) {
        const double a = xseg[t] - mx;
        const double b = yseg[t] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
      }
      total += sxy / ((std::sqrt(sxx) + kEps) * (std::sqrt(syy) + kEps));
      ++count;
    }
  }
  return std::clamp(total / static_cast<double>(count), 0.0, 1.0);
}

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

template <typename F>
std::vector<double> column(const std::vector<ItemMetrics>& items, F get) {
  std::vector<double> out;
  for (const auto& it : items) {
    const double v = get(it);
    if (!std::isnan(v)) out.push_back(v);
  }
  return out;
}

double capped(double v) { return std::clamp(v, -kAggregateCapDb, kAggregateCapDb); }

}  // namespace

Aggregate MetricReport::median() const {
  return {median_of(column(items, [](const ItemMetrics& m) { return capped(m.si_sdr_db); })),
          median_of(column(items, [](const ItemMetrics& m) { return m.llr; })),
          median_of(column(items, [](const ItemMetrics& m) { return m.stoi; }))};
}

Aggregate MetricReport::mean() const {
  return {mean_of(column(items, [](const ItemMetrics& m) { return capped(m.si_sdr_db); })),
          mean_of(column(items, [](const ItemMetrics& m) { return m.llr; })),
          mean_of(column(items, [](const ItemMetrics& m) { return m.stoi; }))};
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  // Avoid "-0.000000".
  if (std::string_view(buf) == "-0.000000") return "0.000000";
  return buf;
}

void MetricReport::write_csv(const std::filesystem::path& file) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << "id,si_sdr_db,llr,stoi\n";
  for (const auto& it : items) {
    out << it.id << ',' << format_number(it.si_sdr_db) << ',' << format_number(it.llr) << ',' << format_number(it.stoi) << '\n';
  }
  const auto med = median();
  const auto avg = mean();
  out << "median," << format_number(med.si_sdr_db) << ',' << format_number(med.llr) << ',' << format_number(med.stoi) << '\n';
  out << "mean," << format_number(avg.si_sdr_db) << ',' << format_number(avg.llr) << ',' << format_number(avg.stoi) << '\n';
}

ItemMetrics evaluate(const std::string& id, const audio::AudioClip& est, const audio::AudioClip& ref) {
  ItemMetrics m;
  m.id = id;
  m.si_sdr_db = si_sdr(est, ref);
  try {
    m.llr = llr(est, ref);
  } catch (const ArgumentError&) {
    m.llr = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    m.stoi = stoi(est, ref);
  } catch (const ArgumentError&) {
    m.stoi = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

}  // namespace rfvoice::metrics
