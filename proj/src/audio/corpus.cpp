#include "rfvoice/audio/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "rfvoice/audio/wav.hpp"
#include "rfvoice/error.hpp"

namespace rfvoice::audio {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Formant {
  double freq;
  double bandwidth;
  double gain;
};

double formant_gain(const std::vector<Formant>& formants, double f) {
  double g = 0.02;
  for (const auto& fm : formants) {
    const double d = (f - fm.freq) / fm.bandwidth;
    g += fm.gain * std::exp(-0.5 * d * d);
  }
  return g;
}

// Piecewise syllable envelope: Hann-shaped bumps, some slots silent.
std::vector<double> syllable_envelope(std::mt19937_64& rng, std::size_t n, double rate_hz, double syl_rate) {
  std::vector<double> env(n, 0.0);
  double t = uniform(rng, 0.0, 0.5 / syl_rate);
  const double total = static_cast<double>(n) / rate_hz;
  while (t < total) {
    const double slot = uniform(rng, 0.7, 1.3) / syl_rate;
    const bool pause = uniform(rng, 0.0, 1.0) < 0.15;
    const double fill = uniform(rng, 0.6, 0.9);
    const double amp = uniform(rng, 0.5, 1.0);
    if (!pause) {
      const double len = slot * fill;
      const auto i0 = static_cast<std::size_t>(t * rate_hz);
      const auto i1 = std::min(n, static_cast<std::size_t>((t + len) * rate_hz));
      for (std::size_t i = i0; i < i1; ++i) {
        const double u = (static_cast<double>(i) / rate_hz - t) / len;
        env[i] = amp * (0.5 - 0.5 * std::cos(kTwoPi * u));
      }
    }
    t += slot;
  }
  return env;
}

}  // namespace

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "white") return NoiseKind::White;
  if (name == "babble" || name == "babble-like") return NoiseKind::Babble;
  if (name == "impulsive") return NoiseKind::Impulsive;
  if (name == "tonal") return NoiseKind::Tonal;
  throw ArgumentError("unknown noise kind '" + std::string(name) + "'");
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::White: return "white";
    case NoiseKind::Babble: return "babble";
    case NoiseKind::Impulsive: return "impulsive";
    case NoiseKind::Tonal: return "tonal";
  }
  return "white";
}

void CorpusSpec::validate() const {
  if (n_items < 0) throw ArgumentError("corpus: n_items must be >= 0");
  if (!(duration_s > 0.0)) throw ArgumentError("corpus: duration_s must be > 0");
  if (!(sample_rate_hz > 0.0)) throw ArgumentError("corpus: sample rate must be > 0");
  if (!(voice.pitch_lo_hz >= 80.0 && voice.pitch_lo_hz <= voice.pitch_hi_hz && voice.pitch_hi_hz <= 7000.0)) {
    throw ArgumentError("corpus: pitch range must lie within the 80-7000 Hz band");
  }
  if (voice.harmonics < 1) throw ArgumentError("corpus: harmonics must be >= 1");
  if (!(voice.envelope_rate_lo_hz > 0.0 && voice.envelope_rate_lo_hz <= voice.envelope_rate_hi_hz)) {
    throw ArgumentError("corpus: envelope rate range invalid");
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mixer = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mixer(mixer(mixer(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

AudioClip gen_voice(const CorpusSpec& spec, std::uint64_t index) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, 0x766f696365ULL, index));
  const double rate = spec.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * rate));
  const auto& v = spec.voice;

  const double base = uniform(rng, v.pitch_lo_hz, v.pitch_hi_hz);
  const double vib_rate = uniform(rng, 0.3, 1.5);
  const double vib_phase = uniform(rng, 0.0, kTwoPi);
  const double drift_rate = uniform(rng, 0.05, 0.3);
  const double drift_phase = uniform(rng, 0.0, kTwoPi);

  std::vector<Formant> formants = {
      {uniform(rng, 300.0, 900.0), uniform(rng, 80.0, 200.0), 1.0},
      {uniform(rng, 900.0, 2500.0), uniform(rng, 100.0, 250.0), uniform(rng, 0.4, 0.8)},
      {uniform(rng, 2000.0, 3500.0), uniform(rng, 150.0, 300.0), uniform(rng, 0.15, 0.4)},
  };
  const double syl_rate = uniform(rng, v.envelope_rate_lo_hz, v.envelope_rate_hi_hz);

  std::vector<double> phases(static_cast<std::size_t>(v.harmonics));
  for (auto& p : phases) p = uniform(rng, 0.0, kTwoPi);

  const auto env = syllable_envelope(rng, n, rate, syl_rate);
  const double band_top = std::min(7000.0, 0.45 * rate);

  AudioClip clip = AudioClip::zeros(n, rate);
  const auto nh = static_cast<std::size_t>(v.harmonics);
  std::vector<std::complex<double>> rot(nh);
  for (std::size_t k = 0; k < nh; ++k) rot[k] = std::polar(1.0, phases[k]);
  // Harmonic weights follow the pitch contour; refreshed every kGainHop samples.
  constexpr std::size_t kGainHop = 32;
  std::vector<double> weight(nh, 0.0);
  double phi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    double f0 = base * (1.0 + 0.06 * std::sin(kTwoPi * vib_rate * t + vib_phase) +
                        0.04 * std::sin(kTwoPi * drift_rate * t + drift_phase));
    f0 = std::clamp(f0, v.pitch_lo_hz, v.pitch_hi_hz);
    phi += kTwoPi * f0 / rate;
    if (i % kGainHop == 0) {
      for (std::size_t k = 0; k < nh; ++k) {
        const double fk = static_cast<double>(k + 1) * f0;
        weight[k] = fk >= band_top ? 0.0 : formant_gain(formants, fk) / std::sqrt(static_cast<double>(k + 1));
      }
    }
    if (env[i] == 0.0) continue;
    const std::complex<double> z = std::polar(1.0, std::fmod(phi, kTwoPi));
    std::complex<double> zk = 1.0;
    double s = 0.0;
    for (std::size_t k = 0; k < nh; ++k) {
      zk *= z;
      if (weight[k] == 0.0) break;
      s += weight[k] * (zk * rot[k]).imag();
    }
    clip.samples[i] = env[i] * s;
  }
  peak_normalize(clip.samples, v.peak);
  return clip;
}

std::vector<double> impulsive_click_times(double duration_s, double density_hz, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x636c69636bULL));
  std::exponential_distribution<double> gap(density_hz);
  std::vector<double> times;
  double t = gap(rng);
  while (t < duration_s) {
    times.push_back(t);
    t += gap(rng);
  }
  return times;
}

AudioClip gen_noise(NoiseKind kind, double duration_s, double rate_hz, std::uint64_t seed,
                    const NoiseParams& params) {
  if (!(duration_s > 0.0) || !(rate_hz > 0.0)) throw ArgumentError("gen_noise: duration and rate must be > 0");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate_hz));
  AudioClip clip = AudioClip::zeros(n, rate_hz);
  std::mt19937_64 rng(derive_seed(seed, 0x6e6f697365ULL, static_cast<std::uint64_t>(kind)));

  switch (kind) {
    case NoiseKind::White: {
      std::normal_distribution<double> g(0.0, params.level_rms);
      for (auto& s : clip.samples) s = g(rng);
      break;
    }
    case NoiseKind::Tonal: {
      const double phase = uniform(rng, 0.0, kTwoPi);
      const double amp = params.level_rms * std::numbers::sqrt2;
      for (std::size_t i = 0; i < n; ++i) {
        clip.samples[i] = amp * std::sin(kTwoPi * params.tone_hz * static_cast<double>(i) / rate_hz + phase);
      }
      break;
    }
    case NoiseKind::Impulsive: {
      const auto times = impulsive_click_times(duration_s, params.click_density_hz, seed);
      std::normal_distribution<double> g(0.0, 1.0);
      const double decay = 0.002 * rate_hz;  // 2 ms time constant
      const auto burst = static_cast<std::size_t>(5.0 * decay);
      // Scale so the long-run RMS is roughly level_rms.
      const double mean_energy = 0.5 * decay * params.click_density_hz / rate_hz;
      const double amp = params.level_rms / std::sqrt(std::max(mean_energy, 1e-12));
      for (double t : times) {
        const auto i0 = static_cast<std::size_t>(t * rate_hz);
        const double a = amp * uniform(rng, 0.5, 1.0);
        for (std::size_t k = 0; k < burst && i0 + k < n; ++k) {
          clip.samples[i0 + k] += a * std::exp(-static_cast<double>(k) / decay) * g(rng);
        }
      }
      break;
    }
    case NoiseKind::Babble: {
      CorpusSpec babble;
      babble.duration_s = duration_s;
      babble.sample_rate_hz = rate_hz;
      babble.seed = derive_seed(seed, 0x626162626c65ULL);
      const double gain = std::pow(10.0, -10.0 / 20.0);
      for (int k = 0; k < 6; ++k) {
        const auto voice = gen_voice(babble, static_cast<std::uint64_t>(k));
        for (std::size_t i = 0; i < n; ++i) clip.samples[i] += gain * voice.samples[i];
      }
      const double rms = std::sqrt(energy(clip.samples) / static_cast<double>(std::max<std::size_t>(n, 1)));
      if (rms > 0.0) {
        for (auto& s : clip.samples) s *= params.level_rms / rms;
      }
      break;
    }
  }
  return clip;
}

NoiseKind corpus_noise_kind(const CorpusSpec& spec, std::uint64_t index) {
  if (spec.noise_kinds.empty()) throw ArgumentError("corpus: no noise kinds configured");
  return spec.noise_kinds[derive_seed(spec.seed, 0x6b696e64ULL, index) % spec.noise_kinds.size()];
}

AudioClip corpus_noise(const CorpusSpec& spec, std::uint64_t index) {
  const NoiseKind kind = corpus_noise_kind(spec, index);
  std::mt19937_64 rng(derive_seed(spec.seed, 0x706172616dULL, index));
  NoiseParams params = spec.noise;
  params.tone_hz = uniform(rng, 200.0, 3000.0);
  params.click_density_hz = spec.noise.click_density_hz * uniform(rng, 0.5, 1.5);
  auto clip = gen_noise(kind, spec.duration_s, spec.sample_rate_hz, derive_seed(spec.seed, 0x6e6f69ULL, index), params);
  if (peak_abs(clip.samples) > 0.9) peak_normalize(clip.samples, 0.9);
  return clip;
}

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRow>& rows) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << "path,role,seed\n";
  for (const auto& r : rows) out << r.path << ',' << r.role << ',' << r.seed << '\n';
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::string line;
  std::getline(in, line);
  if (line != "path,role,seed") throw FormatError(file.string() + ": unexpected manifest header");
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestRow r;
    std::string seed;
    if (!std::getline(ss, r.path, ',') || !std::getline(ss, r.role, ',') || !std::getline(ss, seed)) {
      throw FormatError(file.string() + ": malformed manifest row '" + line + "'");
    }
    r.seed = std::stoull(seed);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ManifestRow> write_corpus(const CorpusSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  std::vector<ManifestRow> rows;
  char name[64];
  for (int i = 0; i < spec.n_items; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    std::snprintf(name, sizeof name, "sources/source_%04d.wav", i);
    write_wav(dir / name, gen_voice(spec, idx));
    rows.push_back({name, "source", derive_seed(spec.seed, 0x766f696365ULL, idx)});
    if (!spec.noise_kinds.empty()) {
      std::snprintf(name, sizeof name, "noise/noise_%04d.wav", i);
      write_wav(dir / name, corpus_noise(spec, idx));
      rows.push_back({name, "noise", derive_seed(spec.seed, 0x6e6f69ULL, idx)});
    }
  }
  write_manifest(dir / "manifest.csv", rows);
  return rows;
}

}  // namespace rfvoice::audio
