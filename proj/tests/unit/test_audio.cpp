#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "rfvoice/audio/corpus.hpp"
#include "rfvoice/audio/dsp.hpp"
#include "rfvoice/audio/wav.hpp"
#include "rfvoice/error.hpp"

using namespace rfvoice;
using namespace rfvoice::audio;
using namespace rfvoice::dsp;

TEST_CASE("mix identity, cancellation and weighted sum") {
  const AudioClip s(testutil::gaussian(500, 1), 16000);
  const AudioClip one[] = {s};
  const double g1[] = {1.0};
  CHECK(mix(one, g1).samples == s.samples);

  AudioClip neg = s;
  for (auto& v : neg.samples) v = -v;
  const AudioClip pair[] = {s, neg};
  const double ones[] = {1.0, 1.0};
  for (double v : mix(pair, ones).samples) CHECK(v == 0.0);

  const AudioClip s2(testutil::gaussian(500, 2), 16000);
  const AudioClip two[] = {s, s2};
  const double w[] = {0.5, 2.0};
  const auto m = mix(two, w);
  for (std::size_t i = 0; i < 500; ++i) CHECK(m.samples[i] == 0.5 * s.samples[i] + 2.0 * s2.samples[i]);
}

TEST_CASE("mix zero-pads shorter clips and rejects rate mismatch") {
  const AudioClip a(std::vector<double>{1, 2, 3}, 16000), b(std::vector<double>{1}, 16000);
  const AudioClip clips[] = {a, b};
  const double g[] = {1.0, 1.0};
  CHECK(mix(clips, g).samples == std::vector<double>{2, 2, 3});
  const AudioClip c(std::vector<double>{1}, 8000);
  const AudioClip bad[] = {a, c};
  CHECK_THROWS_AS(mix(bad, g), ArgumentError);
  const double g3[] = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(mix(clips, g3), ArgumentError);
}

TEST_CASE("crop and peak normalization") {
  const AudioClip a(std::vector<double>{1, -4, 2}, 16000);
  CHECK(crop(a, 1, 4).samples == std::vector<double>{-4, 2, 0, 0});
  auto v = a.samples;
  peak_normalize(v, 0.9);
  CHECK(peak_abs(v) == doctest::Approx(0.9));
  std::vector<double> z(5, 0.0);
  peak_normalize(z, 0.9);
  for (double x : z) CHECK(x == 0.0);
}

TEST_CASE("voice generator is deterministic and decorrelated") {
  CorpusSpec spec;
  spec.duration_s = 2.0;
  const auto a = gen_voice(spec, 3), b = gen_voice(spec, 3);
  CHECK(a.samples == b.samples);
  CHECK(a.size() == 32000);
  CHECK(peak_abs(a.samples) == doctest::Approx(spec.voice.peak));
  double sum = 0.0;
  int pairs = 0;
  std::vector<AudioClip> v;
  for (int i = 0; i < 8; ++i) v.push_back(gen_voice(spec, static_cast<std::uint64_t>(i)));
  for (int i = 0; i < 8; ++i) {
    for (int j = i + 1; j < 8; ++j) {
      const double c = std::abs(testutil::correlation(v[i].samples, v[j].samples));
      CHECK(c < 0.3);
      sum += c;
      ++pairs;
    }
  }
  CHECK(sum / pairs < 0.2);
}

TEST_CASE("narrow pitch range puts the fundamental at that pitch") {
  CorpusSpec spec;
  spec.duration_s = 1.0;
  spec.voice.pitch_lo_hz = 120.0;
  spec.voice.pitch_hi_hz = 121.0;
  const auto v = gen_voice(spec, 0);
  const double f = testutil::peak_oracle<double>(v.samples, 16000.0, 100.0, 140.0, 80);
  CHECK(f == doctest::Approx(120.5).epsilon(0.01));
}

TEST_CASE("corpus spec validation") {
  CorpusSpec spec;
  spec.voice.pitch_lo_hz = 50.0;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec = CorpusSpec{};
  spec.duration_s = 0.0;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
}

TEST_CASE("white noise has the target variance") {
  NoiseParams p;
  p.level_rms = 0.2;
  const auto n = gen_noise(NoiseKind::White, 5.0, 16000.0, 17, p);
  const double m = mean(n.samples);
  double var = 0.0;
  for (double x : n.samples) var += (x - m) * (x - m);
  var /= static_cast<double>(n.size() - 1);
  CHECK(var == doctest::Approx(0.04).epsilon(0.05));
}

TEST_CASE("tonal noise has a single spectral peak at the tone") {
  NoiseParams p;
  p.tone_hz = 1000.0;
  const auto n = gen_noise(NoiseKind::Tonal, 0.5, 16000.0, 3, p);
  const double f = testutil::peak_oracle<double>(n.samples, 16000.0, 100.0, 7900.0, 780);
  CHECK(f == doctest::Approx(1000.0).epsilon(1e-4));
}

TEST_CASE("impulsive click count lies in the Poisson 99 percent interval") {
  const double d = 4.0, dur = 50.0, lambda = d * dur;
  // central 99% interval of Poisson(lambda) from its pmf
  std::vector<double> cdf;
  double pmf = std::exp(-lambda), acc = 0.0;
  for (int k = 0; k < 600; ++k) {
    acc += pmf;
    cdf.push_back(acc);
    pmf *= lambda / (k + 1);
  }
  int lo = 0, hi = 0;
  while (cdf[static_cast<std::size_t>(lo)] < 0.005) ++lo;
  while (cdf[static_cast<std::size_t>(hi)] < 0.995) ++hi;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto times = impulsive_click_times(dur, d, seed);
    CHECK(static_cast<int>(times.size()) >= lo);
    CHECK(static_cast<int>(times.size()) <= hi);
    NoiseParams p;
    p.click_density_hz = d;
    const auto clip = gen_noise(NoiseKind::Impulsive, dur, 16000.0, seed, p);
    for (double t : times) {
      const auto i = static_cast<std::size_t>(t * 16000.0);
      double local = 0.0;
      for (std::size_t k = i; k < std::min(clip.size(), i + 32); ++k) local = std::max(local, std::abs(clip.samples[k]));
      CHECK(local > 0.0);
    }
  }
}

TEST_CASE("babble noise and unknown kinds") {
  const auto b = gen_noise(NoiseKind::Babble, 1.0, 16000.0, 5);
  CHECK(b.size() == 16000);
  CHECK(energy(b.samples) > 0.0);
  CHECK(parse_noise_kind("babble-like") == NoiseKind::Babble);
  CHECK_THROWS_AS(parse_noise_kind("pink"), ArgumentError);
}

TEST_CASE("derived seeds differ per channel") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
  CHECK(derive_seed(1, 2, 0) != derive_seed(1, 3, 0));
}

TEST_CASE("WAV round trip is sample exact for PCM16 values") {
  testutil::TempDir dir("wav");
  auto values = quantize_pcm16(testutil::gaussian(1000, 9, 0.3));
  const AudioClip c(values, 16000);
  write_wav(dir.path / "a.wav", c);
  const auto back = read_wav(dir.path / "a.wav");
  CHECK(back.sample_rate_hz == 16000.0);
  CHECK(back.samples == values);
}

TEST_CASE("WAV writer clips out-of-range samples with a warning") {
  testutil::TempDir dir("wavclip");
  testutil::WarningCapture w;
  write_wav(dir.path / "c.wav", AudioClip(std::vector<double>{1.5, -2.0, 0.5}, 16000));
  CHECK_FALSE(w.messages.empty());
  const auto back = read_wav(dir.path / "c.wav");
  CHECK(back.samples[0] == 32767.0 / 32768.0);
  CHECK(back.samples[1] == -1.0);
  CHECK(back.samples[2] == 0.5);
}

namespace {
void write_header(const std::filesystem::path& p, std::uint16_t format, std::uint16_t channels, std::uint16_t bits) {
  std::ofstream o(p, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { o.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t data = 8;
  o.write("RIFF", 4);
  u32(36 + data);
  o.write("WAVE", 4);
  o.write("fmt ", 4);
  u32(16);
  u16(format);
  u16(channels);
  u32(16000);
  u32(16000u * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  o.write("data", 4);
  u32(data);
  for (std::uint32_t i = 0; i < data; ++i) o.put(0);
}
}  // namespace

TEST_CASE("WAV reader rejects unsupported encodings and malformed files") {
  testutil::TempDir dir("wavbad");
  write_header(dir.path / "stereo.wav", 1, 2, 16);
  CHECK_THROWS_AS(read_wav(dir.path / "stereo.wav"), FormatError);
  write_header(dir.path / "float.wav", 3, 1, 32);
  CHECK_THROWS_AS(read_wav(dir.path / "float.wav"), FormatError);
  write_header(dir.path / "ok.wav", 1, 1, 16);
  CHECK(read_wav(dir.path / "ok.wav").size() == 4);
  {
    std::ofstream o(dir.path / "junk.wav", std::ios::binary);
    o << "not a wave file at all";
  }
  CHECK_THROWS_AS(read_wav(dir.path / "junk.wav"), FormatError);
  CHECK_THROWS_AS(read_wav(dir.path / "none.wav"), IoError);
}

TEST_CASE("manifest round trip and corpus writer") {
  testutil::TempDir dir("corpus");
  CorpusSpec spec;
  spec.n_items = 3;
  spec.duration_s = 0.5;
  spec.noise_kinds = {NoiseKind::White, NoiseKind::Tonal};
  const auto rows = write_corpus(spec, dir.path / "c");
  CHECK(rows.size() == 6);
  const auto back = read_manifest(dir.path / "c" / "manifest.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].path == rows[i].path);
    CHECK(back[i].role == rows[i].role);
    CHECK(back[i].seed == rows[i].seed);
    CHECK(read_wav(dir.path / "c" / rows[i].path).size() == 8000);
  }
  const auto again = write_corpus(spec, dir.path / "d");
  std::ifstream m1(dir.path / "c" / "manifest.csv"), m2(dir.path / "d" / "manifest.csv");
  const std::string t1((std::istreambuf_iterator<char>(m1)), {}), t2((std::istreambuf_iterator<char>(m2)), {});
  CHECK(t1 == t2);
}

TEST_CASE("single-item corpus") {
  testutil::TempDir dir("one");
  CorpusSpec spec;
  spec.n_items = 1;
  spec.duration_s = 0.25;
  const auto rows = write_corpus(spec, dir.path);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].role == "source");
}

TEST_CASE("resampler ratio and passband") {
  const auto s = testutil::sine(1000.0, 48000.0, 48000);
  const auto r = resample(s.samples, 48000.0, 16000.0);
  CHECK(r.size() == 16000);
  const auto ref = testutil::sine(1000.0, 16000.0, 16000);
  double worst = 0.0;
  for (std::size_t i = 200; i < 15800; ++i) worst = std::max(worst, std::abs(r[i] - ref.samples[i]));
  CHECK(worst < 1e-3);
  CHECK(resample(s.samples, 48000.0, 48000.0) == s.samples);
}

TEST_CASE("FFT agrees with a direct DFT") {
  const auto x = testutil::gaussian(37, 4);
  const auto X = rfft(x, 64);
  for (std::size_t k = 0; k < X.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * std::polar(1.0, -testutil::kTwoPi * k * i / 64.0);
    CHECK(std::abs(X[k] - acc) < 1e-10);
  }
  const auto back = irfft(X, 64);
  for (std::size_t i = 0; i < 64; ++i) CHECK(back[i] == doctest::Approx(i < 37 ? x[i] : 0.0).epsilon(1e-12).scale(1.0));
}

TEST_CASE("centred FIR filtering matches direct convolution on both code paths") {
  const auto taps = design_lowpass(101, 2000.0, 16000.0);
  for (std::size_t n : {300u, 5000u}) {
    const auto x = testutil::gaussian(n, n);
    const auto y = filter_centered(x, taps);
    REQUIRE(y.size() == n);
    for (std::size_t i = 0; i < n; i += 37) {
      double acc = 0.0;
      for (std::size_t k = 0; k < taps.size(); ++k) {
        const long j = static_cast<long>(i) + 50 - static_cast<long>(k);
        if (j >= 0 && j < static_cast<long>(n)) acc += taps[k] * x[static_cast<std::size_t>(j)];
      }
      CHECK(y[i] == doctest::Approx(acc).epsilon(1e-9).scale(1.0));
    }
  }
}
