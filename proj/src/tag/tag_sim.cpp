#include "rfvoice/tag/tag_sim.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "rfvoice/audio/dsp.hpp"
#include "rfvoice/error.hpp"
#include "rfvoice/log.hpp"

namespace rfvoice::tag {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_junction_domain(double v_pz, const TagParams& p) {
  if (!std::isfinite(v_pz)) throw DataError("piezo voltage is not finite");
  if (!(1.0 + v_pz / p.phi_t_v > 0.0)) {
    throw DomainError("junction model invalid: v_pz = " + std::to_string(v_pz) + " V <= -phi_T");
  }
}

}  // namespace

TagParams::TagParams() { calibrate(kDefaultCarrierHz, kDefaultFullScaleDeviationHz); }

void TagParams::calibrate(double carrier_hz, double full_scale_deviation_hz) {
  gamma12 = carrier_hz / f_res0_hz();
  // Linearized deviation: f_c0 * v / (4 phi_T) = full scale at unit pressure.
  piezo_sensitivity_v = full_scale_deviation_hz * 4.0 * phi_t_v / carrier_hz;
}

double TagParams::f_res0_hz() const { return 1.0 / (kTwoPi * std::sqrt(inductance_h * c0_f)); }

void TagParams::validate() const {
  if (!(inductance_h > 0.0)) throw ArgumentError("TagParams: inductance must be > 0");
  if (!(c0_f > 0.0)) throw ArgumentError("TagParams: C0 must be > 0");
  if (!(phi_t_v > 0.0)) throw ArgumentError("TagParams: phi_T must be > 0");
  if (!(gamma12 > 0.0)) throw ArgumentError("TagParams: gamma12 must be > 0");
  if (!(f_b_hz >= 0.0)) throw ArgumentError("TagParams: f_b must be >= 0");
  if (!std::isfinite(piezo_sensitivity_v)) throw ArgumentError("TagParams: piezo sensitivity must be finite");
  const double f0 = f_res0_hz();
  if (!(std::isfinite(f0) && f0 > 0.0)) throw ArgumentError("TagParams: f_res0 is not finite");
}

void ChannelParams::validate() const {
  if (!(attenuation_db >= 0.0)) throw ArgumentError("ChannelParams: attenuation_db must be >= 0");
  if (snr_db && !std::isfinite(*snr_db)) throw ArgumentError("ChannelParams: snr_db must be finite (omit for noiseless)");
  if (!std::isfinite(cfo_hz) || !std::isfinite(cfo_drift_hz_per_s)) throw ArgumentError("ChannelParams: CFO must be finite");
}

void IQTrace::validate() const {
  if (samples.empty()) throw ArgumentError("IQTrace: empty trace");
  if (!(sample_rate_hz > 0.0)) throw ArgumentError("IQTrace: sample rate must be > 0");
  if (!(std::abs(if_center_hz) < sample_rate_hz / 2.0)) throw ArgumentError("IQTrace: IF above Nyquist");
}

audio::AudioClip piezo_voltage(const audio::AudioClip& pressure, double sensitivity_v) {
  pressure.validate();
  audio::AudioClip out = pressure;
  for (double& v : out.samples) v *= sensitivity_v;
  return out;
}

double junction_capacitance(double v_pz, const TagParams& p) {
  check_junction_domain(v_pz, p);
  return p.c0_f / std::sqrt(1.0 + v_pz / p.phi_t_v);
}

double resonance_frequency(double v_pz, const TagParams& p, ResonanceMode mode) {
  const double f0 = p.f_res0_hz();
  if (mode == ResonanceMode::Linearized) {
    if (!std::isfinite(v_pz)) throw DataError("piezo voltage is not finite");
    return f0 * (1.0 + v_pz / (4.0 * p.phi_t_v));
  }
  check_junction_domain(v_pz, p);
  return f0 * std::pow(1.0 + v_pz / p.phi_t_v, 0.25);
}

FrequencyPlan frequency_plan(const TagParams& p) {
  p.validate();
  FrequencyPlan plan{};
  plan.f_c0_hz = p.gamma12 * p.f_res0_hz();
  plan.f_b_hz = p.f_b_hz;
  plan.f_ex_hz = plan.f_c0_hz + p.f_b_hz;
  plan.degenerate = p.f_b_hz == 0.0;
  if (plan.degenerate) {
    log::warn("frequency plan: f_b = 0, excitation and reflection share one frequency (self-interference)");
  }
  return plan;
}

double frequency_deviation(double v_pz, const TagParams& p, ResonanceMode mode) {
  const double f0 = p.f_res0_hz();
  if (mode == ResonanceMode::Linearized) return p.gamma12 * f0 * v_pz / (4.0 * p.phi_t_v);
  return p.gamma12 * (resonance_frequency(v_pz, p, ResonanceMode::Exact) - f0);
}

IQTrace synthesize_backscatter_iq(const audio::AudioClip& voice, const TagParams& p, double if_center_hz,
                                  double iq_rate_hz, ResonanceMode mode) {
  p.validate();
  if (voice.empty()) throw ArgumentError("synthesize_backscatter_iq: empty voice clip");
  const auto volts = piezo_voltage(voice, p.piezo_sensitivity_v);
  const auto v_iq = dsp::resample(volts.samples, volts.sample_rate_hz, iq_rate_hz);

  std::vector<double> dev(v_iq.size());
  double max_dev = 0.0;
  for (std::size_t k = 0; k < v_iq.size(); ++k) {
    dev[k] = frequency_deviation(v_iq[k], p, mode);
    max_dev = std::max(max_dev, std::abs(dev[k]));
  }
  if (max_dev > iq_rate_hz / 4.0) {
    throw AliasingError("peak FM deviation " + std::to_string(max_dev) + " Hz exceeds iq_rate/4 = " +
                        std::to_string(iq_rate_hz / 4.0) + " Hz");
  }
  if (std::abs(if_center_hz) + max_dev >= iq_rate_hz / 2.0) {
    throw AliasingError("IF plus deviation crosses Nyquist of the IQ sample rate");
  }

  IQTrace out;
  out.sample_rate_hz = iq_rate_hz;
  out.if_center_hz = if_center_hz;
  out.samples.resize(dev.size());
  double phase = 0.0;
  for (std::size_t k = 0; k < dev.size(); ++k) {
    phase += kTwoPi * (if_center_hz + dev[k]) / iq_rate_hz;
    phase = std::remainder(phase, kTwoPi);
    out.samples[k] = std::polar(1.0, phase);
  }
  return out;
}

IQTrace apply_channel(const IQTrace& iq, const ChannelParams& ch) {
  iq.validate();
  ch.validate();
  IQTrace out = iq;
  const double gain = std::pow(10.0, -ch.attenuation_db / 20.0);
  const bool rotate = ch.cfo_hz != 0.0 || ch.cfo_drift_hz_per_s != 0.0;
  if (gain != 1.0 || rotate) {
    double phase = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double t = static_cast<double>(k) / iq.sample_rate_hz;
      // Instantaneous offset cfo + drift * t, integrated to a running phase.
      phase = kTwoPi * (ch.cfo_hz * t + 0.5 * ch.cfo_drift_hz_per_s * t * t);
      out.samples[k] = iq.samples[k] * (rotate ? std::polar(gain, std::remainder(phase, kTwoPi)) : cplx(gain, 0.0));
    }
  }
  if (ch.snr_db) {
    double power = 0.0;
    for (const auto& s : out.samples) power += std::norm(s);
    power /= static_cast<double>(out.size());
    const double sigma = std::sqrt(power / std::pow(10.0, *ch.snr_db / 10.0) / 2.0);
    std::mt19937_64 rng(ch.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& s : out.samples) {
      const double re = g(rng);
      const double im = g(rng);
      s += cplx(sigma * re, sigma * im);
    }
  }
  return out;
}

void write_iq(const std::filesystem::path& path, const IQTrace& trace) {
  trace.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::string blob(trace.size() * 8, '\0');
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const float iq[2] = {static_cast<float>(trace.samples[k].real()), static_cast<float>(trace.samples[k].imag())};
    for (int c = 0; c < 2; ++c) {
      std::uint32_t bits;
      std::memcpy(&bits, &iq[c], 4);
      for (int b = 0; b < 4; ++b) blob[k * 8 + static_cast<std::size_t>(c) * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));

  std::ofstream h(path.string() + ".hdr", std::ios::trunc);
  if (!h) throw IoError("cannot write header for " + path.string());
  char line[128];
  h << "format=cf32le\n";
  std::snprintf(line, sizeof line, "sample_rate_hz=%.17g\n", trace.sample_rate_hz);
  h << line;
  std::snprintf(line, sizeof line, "if_center_hz=%.17g\n", trace.if_center_hz);
  h << line;
  h << "length=" << trace.size() << '\n';
}

IQTrace read_iq(const std::filesystem::path& path) {
  std::ifstream h(path.string() + ".hdr");
  if (!h) throw IoError("missing IQ header " + path.string() + ".hdr");
  IQTrace trace;
  std::size_t length = 0;
  bool have_rate = false, have_if = false, have_len = false;
  std::string line;
  while (std::getline(h, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("IQ header: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "format") {
        if (val != "cf32le") throw FormatError("IQ header: unsupported format '" + val + "'");
      } else if (key == "sample_rate_hz") {
        trace.sample_rate_hz = std::stod(val);
        have_rate = true;
      } else if (key == "if_center_hz") {
        trace.if_center_hz = std::stod(val);
        have_if = true;
      } else if (key == "length") {
        length = std::stoull(val);
        have_len = true;
      } else {
        throw FormatError("IQ header: unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw FormatError("IQ header: bad value for '" + key + "'");
    }
  }
  if (!have_rate || !have_if || !have_len) throw FormatError("IQ header: missing sample_rate_hz, if_center_hz or length");

  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (blob.size() != length * 8) {
    throw FormatError("IQ file " + path.string() + ": " + std::to_string(blob.size()) + " bytes, header says " +
                      std::to_string(length) + " samples");
  }
  trace.samples.resize(length);
  for (std::size_t k = 0; k < length; ++k) {
    float iq[2];
    for (int c = 0; c < 2; ++c) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[k * 8 + static_cast<std::size_t>(c) * 4 + static_cast<std::size_t>(b)])) << (8 * b);
      }
      std::memcpy(&iq[c], &bits, 4);
    }
    trace.samples[k] = {iq[0], iq[1]};
  }
  trace.validate();
  return trace;
}

}  // namespace rfvoice::tag
