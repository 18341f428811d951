#include "rfvoice/harness/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rfvoice/audio/wav.hpp"
#include "rfvoice/error.hpp"
#include "rfvoice/log.hpp"
#include "rfvoice/nn/checkpoint.hpp"

namespace rfvoice::harness {

namespace fs = std::filesystem;
using audio::AudioClip;
using json = nlohmann::ordered_json;
using ssl::Rng;
using ssl::Signal;

namespace {

// Seed-derivation channels.
enum : std::uint64_t {
  kSeedOod = 1,
  kSeedInDomain,
  kSeedMixGain,
  kSeedChannel,
  kSeedPretrainSep,
  kSeedPretrainDen,
  kSeedSepTargetInit,
  kSeedSep1,
  kSeedDenTargetInit,
  kSeedDen,
  kSeedFeedback,
  kSeedSep2,
  kSeedSweep,
  kSeedMainInit,
  kSeedPretrainMix,
};

const std::vector<std::string> kStages = {"gen-corpus", "acquire",    "pretrain",   "sep-round1",
                                          "denoise",    "feedback",   "sep-round2", "eval"};

std::string fmt_index(const char* prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.wav", prefix, i);
  return buf;
}

audio::CorpusSpec split_spec(const PipelineConfig& cfg, int n_items, std::uint64_t seed) {
  audio::CorpusSpec s = cfg.corpus;
  s.n_items = n_items;
  s.seed = seed;
  return s;
}

audio::CorpusSpec in_domain_spec(const PipelineConfig& cfg) {
  return split_spec(cfg, cfg.data.train_sources + cfg.data.val_sources + cfg.data.eval_sources,
                    audio::derive_seed(cfg.seed, kSeedInDomain));
}

audio::CorpusSpec ood_spec(const PipelineConfig& cfg) {
  return split_spec(cfg, cfg.data.ood_sources, audio::derive_seed(cfg.seed, kSeedOod));
}

AudioClip read_noise_or_zero(const fs::path& dir, std::size_t idx, const AudioClip& like) {
  const auto p = dir / "noise" / fmt_index("noise", idx);
  if (fs::exists(p)) return audio::read_wav(p);
  return AudioClip::zeros(like.size(), like.sample_rate_hz);
}

AudioClip scaled(const AudioClip& c, double g) {
  AudioClip out = c;
  for (auto& v : out.samples) v *= g;
  return out;
}

AudioClip normalized(AudioClip c, double peak) {
  audio::peak_normalize(c.samples, peak);
  return c;
}

// Gain applied to `noise` so that sources/noise power ratio equals snr_db.
double noise_gain(std::span<const double> speech, std::span<const double> noise, double snr_db) {
  const double ps = audio::energy(speech);
  const double pn = audio::energy(noise);
  if (pn == 0.0 || ps == 0.0) return 0.0;
  return std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
}

tag::ChannelParams draw_channel(const PipelineConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  tag::ChannelParams ch;
  ch.snr_db = cfg.channel.snr_db;
  ch.attenuation_db = cfg.channel.attenuation_db;
  ch.cfo_hz = ssl::uniform(rng, -cfg.channel.cfo_max_hz, cfg.channel.cfo_max_hz);
  ch.cfo_drift_hz_per_s = ssl::uniform(rng, -cfg.channel.drift_max_hz_per_s, cfg.channel.drift_max_hz_per_s);
  ch.seed = rng();
  return ch;
}

AudioClip over_the_air(const PipelineConfig& cfg, const AudioClip& pressure, const tag::ChannelParams& ch) {
  const auto iq = tag::synthesize_backscatter_iq(pressure, cfg.tag, cfg.if_center_hz, cfg.iq_rate_hz);
  const auto rx = tag::apply_channel(iq, ch);
  auto out = reader::recover_voice(rx, cfg.demod).audio;
  out.samples.resize(pressure.size(), 0.0);
  return out;
}

// --- stage bookkeeping ---------------------------------------------------------

fs::path marker_path(const fs::path& out, const std::string& stage) { return out / "stages" / (stage + ".done"); }

bool stage_done(const fs::path& out, const std::string& stage) { return fs::exists(marker_path(out, stage)); }

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream o(tmp, std::ios::trunc);
    if (!o) throw IoError("cannot write " + tmp);
    o << text;
    if (!o) throw IoError("write failed for " + tmp);
  }
  fs::rename(tmp, p);
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

// --- data loading --------------------------------------------------------------

struct Split {
  std::string name;
  int first_source;
  int sources;
};

std::vector<Split> splits(const PipelineConfig& cfg) {
  const auto& d = cfg.data;
  return {{"train", 0, d.train_sources},
          {"val", d.train_sources, d.val_sources},
          {"eval", d.train_sources + d.val_sources, d.eval_sources}};
}

std::vector<Recording> load_split(const fs::path& out, const std::string& name) {
  const auto dir = out / "data" / name;
  const auto rows = audio::read_manifest(dir / "manifest.csv");
  std::vector<Recording> recs;
  for (const auto& r : rows) {
    if (r.role != "mixture") continue;
    const std::string idx = r.path.substr(r.path.size() - 8, 4);
    Recording rec;
    rec.mixture = audio::read_wav(dir / r.path);
    rec.sources.push_back(audio::read_wav(dir / ("src0_" + idx + ".wav")));
    rec.sources.push_back(audio::read_wav(dir / ("src1_" + idx + ".wav")));
    rec.noise = audio::read_wav(dir / ("noise_" + idx + ".wav"));
    recs.push_back(std::move(rec));
  }
  return recs;
}

std::vector<NoisyClip> load_den_eval(const fs::path& out) {
  const auto dir = out / "data" / "den_eval";
  const auto rows = audio::read_manifest(dir / "manifest.csv");
  std::vector<NoisyClip> clips;
  for (const auto& r : rows) {
    if (r.role != "mixture") continue;
    const std::string idx = r.path.substr(r.path.size() - 8, 4);
    clips.push_back({audio::read_wav(dir / r.path), audio::read_wav(dir / ("clean_" + idx + ".wav")),
                     audio::read_wav(dir / ("noise_" + idx + ".wav"))});
  }
  return clips;
}

std::vector<AudioClip> mixtures_of(const std::vector<Recording>& recs) {
  std::vector<AudioClip> m;
  for (const auto& r : recs) m.push_back(r.mixture);
  return m;
}

std::vector<AudioClip> load_pool(const fs::path& out) {
  const auto dir = out / "pool";
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw IoError("missing refreshed pool manifest");
  std::string line;
  std::getline(in, line);
  std::vector<AudioClip> pool;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    pool.push_back(audio::read_wav(dir / line.substr(0, line.find(','))));
  }
  return pool;
}

// --- models --------------------------------------------------------------------

nn::NetConfig sep_net(const PipelineConfig& cfg) {
  auto c = nn::sep_config(cfg.train.sep_heads);
  c.front = cfg.train.front_end;
  return c;
}

nn::NetConfig den_net(const PipelineConfig& cfg) {
  auto c = nn::den_config();
  c.front = cfg.train.front_end;
  return c;
}

nn::MaskNet load_model(const nn::NetConfig& nc, const fs::path& p) {
  nn::MaskNet m(nc, 0);
  nn::load_checkpoint(p, m);
  return m;
}

// --- evaluation ------------------------------------------------------------------

std::vector<Signal> signals(const std::vector<AudioClip>& clips) {
  std::vector<Signal> s;
  for (const auto& c : clips) s.push_back(c.samples);
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SepEval {
  std::vector<double> sdri;
  metrics::MetricReport report;
  double median_sdri() const { return median(sdri); }
};

double capped_sdr(const AudioClip& est, const AudioClip& ref) {
  return std::clamp(metrics::si_sdr(est, ref), -metrics::kAggregateCapDb, metrics::kAggregateCapDb);
}

SepEval eval_separator(const nn::MaskNet& model, const std::vector<Recording>& recs, double active_db, bool full) {
  SepEval ev;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    const auto outs = model.infer(r.mixture);
    std::vector<int> chosen;
    const auto sdr = ssl::matched_si_sdr(signals(outs), r.mixture.samples, signals(r.sources), active_db, &chosen);
    for (std::size_t j = 0; j < r.sources.size(); ++j) {
      ev.sdri.push_back(sdr[j] - capped_sdr(r.mixture, r.sources[j]));
      if (full) {
        const std::string id = "item" + std::to_string(i) + "_src" + std::to_string(j);
        ev.report.items.push_back(metrics::evaluate(id, outs[static_cast<std::size_t>(chosen[j])], r.sources[j]));
      }
    }
  }
  return ev;
}

metrics::MetricReport eval_mixture_baseline(const std::vector<Recording>& recs) {
  metrics::MetricReport rep;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (std::size_t j = 0; j < recs[i].sources.size(); ++j) {
      rep.items.push_back(metrics::evaluate("item" + std::to_string(i) + "_src" + std::to_string(j), recs[i].mixture,
                                            recs[i].sources[j]));
    }
  }
  return rep;
}

struct DenEval {
  std::vector<double> sdri;
  metrics::MetricReport report;
};

DenEval eval_denoiser(const nn::MaskNet* model, const std::vector<NoisyClip>& clips) {
  DenEval ev;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& c = clips[i];
    const AudioClip est = model ? nn::forward_denoise(*model, c.noisy).speech : c.noisy;
    ev.sdri.push_back(capped_sdr(est, c.clean) - capped_sdr(c.noisy, c.clean));
    ev.report.items.push_back(metrics::evaluate("clip" + std::to_string(i), est, c.clean));
  }
  return ev;
}

// --- stages --------------------------------------------------------------------

struct Context {
  const PipelineConfig& cfg;
  fs::path out;
};

void stage_gen_corpus(const Context& cx, json& info) {
  const auto rows = cmd_gen_corpus(cx.cfg, cx.out / "corpus");
  info["files"] = rows.size();
}

void stage_acquire(const Context& cx, json& info) {
  const auto& cfg = cx.cfg;
  const auto in_dir = cx.out / "corpus" / "indomain";
  const double peak = cfg.data.mixture_peak;
  std::size_t sims = 0;
  for (const auto& sp : splits(cfg)) {
    const auto dir = cx.out / "data" / sp.name;
    fs::create_directories(dir);
    std::vector<audio::ManifestRow> rows;
    for (int k = 0; k < sp.sources / 2; ++k) {
      const auto a = static_cast<std::size_t>(sp.first_source + 2 * k);
      const auto sa = audio::read_wav(in_dir / "sources" / fmt_index("source", a));
      const auto sb = audio::read_wav(in_dir / "sources" / fmt_index("source", a + 1));
      const auto noise = read_noise_or_zero(in_dir, a, sa);
      Rng rng(audio::derive_seed(cfg.seed, kSeedMixGain, a));
      const double snr = ssl::uniform(rng, cfg.data.acoustic_snr_lo_db, cfg.data.acoustic_snr_hi_db);
      const AudioClip pair_clips[] = {sa, sb};
      const double ones[] = {1.0, 1.0};
      const auto speech = audio::mix(pair_clips, ones);
      const double gn = noise_gain(speech.samples, noise.samples, snr);
      const AudioClip parts[] = {sa, sb, noise};
      const double gains[] = {1.0, 1.0, gn};
      auto pressure = audio::mix(parts, gains);
      const double pk = audio::peak_abs(pressure.samples);
      const double f = pk > 0.0 ? peak / pk : 1.0;
      pressure = scaled(pressure, f);
      const auto ch_seed = audio::derive_seed(cfg.seed, kSeedChannel, a);
      const auto recovered = over_the_air(cfg, pressure, draw_channel(cfg, ch_seed));
      ++sims;
      const std::string idx = fmt_index("", static_cast<std::size_t>(k)).substr(1, 4);
      audio::write_wav(dir / ("mix_" + idx + ".wav"), recovered);
      audio::write_wav(dir / ("src0_" + idx + ".wav"), normalized(reader::band_limit(scaled(sa, f), cfg.demod), peak));
      audio::write_wav(dir / ("src1_" + idx + ".wav"), normalized(reader::band_limit(scaled(sb, f), cfg.demod), peak));
      audio::write_wav(dir / ("noise_" + idx + ".wav"),
                       normalized(reader::band_limit(scaled(noise, f * gn), cfg.demod), peak));
      rows.push_back({"mix_" + idx + ".wav", "mixture", ch_seed});
      rows.push_back({"src0_" + idx + ".wav", "source", a});
      rows.push_back({"src1_" + idx + ".wav", "source", a + 1});
      rows.push_back({"noise_" + idx + ".wav", "noise", a});
    }
    audio::write_manifest(dir / "manifest.csv", rows);
    log::info("acquire: " + sp.name + " done");
  }
  // Held-out single-speaker noisy recordings for the denoiser.
  const auto dir = cx.out / "data" / "den_eval";
  fs::create_directories(dir);
  std::vector<audio::ManifestRow> rows;
  const auto ev = splits(cfg)[2];
  for (int k = 0; k < ev.sources; ++k) {
    const auto a = static_cast<std::size_t>(ev.first_source + k);
    const auto clean = audio::read_wav(in_dir / "sources" / fmt_index("source", a));
    const auto noise = read_noise_or_zero(in_dir, a, clean);
    Rng rng(audio::derive_seed(cfg.seed, kSeedMixGain + 0x100, a));
    const double snr = ssl::uniform(rng, cfg.data.acoustic_snr_lo_db, cfg.data.acoustic_snr_hi_db);
    const double gn = noise_gain(clean.samples, noise.samples, snr);
    const AudioClip parts[] = {clean, noise};
    const double gains[] = {1.0, gn};
    auto pressure = audio::mix(parts, gains);
    const double pk = audio::peak_abs(pressure.samples);
    const double f = pk > 0.0 ? peak / pk : 1.0;
    pressure = scaled(pressure, f);
    const auto ch_seed = audio::derive_seed(cfg.seed, kSeedChannel + 0x100, a);
    const auto recovered = over_the_air(cfg, pressure, draw_channel(cfg, ch_seed));
    ++sims;
    const std::string idx = fmt_index("", static_cast<std::size_t>(k)).substr(1, 4);
    audio::write_wav(dir / ("noisy_" + idx + ".wav"), recovered);
    audio::write_wav(dir / ("clean_" + idx + ".wav"), normalized(reader::band_limit(scaled(clean, f), cfg.demod), peak));
    audio::write_wav(dir / ("noise_" + idx + ".wav"),
                     normalized(reader::band_limit(scaled(noise, f * gn), cfg.demod), peak));
    rows.push_back({"noisy_" + idx + ".wav", "mixture", ch_seed});
    rows.push_back({"clean_" + idx + ".wav", "source", a});
    rows.push_back({"noise_" + idx + ".wav", "noise", a});
  }
  audio::write_manifest(dir / "manifest.csv", rows);
  info["recordings"] = sims;
}

std::vector<ssl::LabeledMixture> ood_sep_data(const PipelineConfig& cfg, const fs::path& dir) {
  std::vector<ssl::LabeledMixture> data;
  for (int k = 0; k < cfg.data.ood_sources / 2; ++k) {
    const auto a = static_cast<std::size_t>(2 * k);
    const auto sa = audio::read_wav(dir / "sources" / fmt_index("source", a));
    const auto sb = audio::read_wav(dir / "sources" / fmt_index("source", a + 1));
    const auto noise = read_noise_or_zero(dir, a, sa);
    Rng rng(audio::derive_seed(cfg.seed, kSeedPretrainMix, a));
    const double snr = ssl::uniform(rng, cfg.data.acoustic_snr_lo_db, cfg.data.acoustic_snr_hi_db);
    const AudioClip pair_clips[] = {sa, sb};
    const double ones[] = {1.0, 1.0};
    const double gn = noise_gain(audio::mix(pair_clips, ones).samples, noise.samples, snr);
    const AudioClip parts[] = {sa, sb, noise};
    const double gains[] = {1.0, 1.0, gn};
    auto mixture = audio::mix(parts, gains);
    const double pk = audio::peak_abs(mixture.samples);
    const double f = pk > 0.0 ? cfg.data.mixture_peak / pk : 1.0;
    ssl::LabeledMixture lm{scaled(mixture, f), {scaled(sa, f).samples, scaled(sb, f).samples}};
    if (gn > 0.0) lm.refs.push_back(scaled(noise, f * gn).samples);
    data.push_back(std::move(lm));
  }
  return data;
}

std::vector<ssl::LabeledMixture> ood_den_data(const PipelineConfig& cfg, const fs::path& dir) {
  std::vector<ssl::LabeledMixture> data;
  for (int k = 0; k < cfg.data.ood_sources; ++k) {
    const auto a = static_cast<std::size_t>(k);
    const auto clean = audio::read_wav(dir / "sources" / fmt_index("source", a));
    const auto noise = read_noise_or_zero(dir, a, clean);
    Rng rng(audio::derive_seed(cfg.seed, kSeedPretrainMix + 0x100, a));
    const double snr = ssl::uniform(rng, cfg.data.acoustic_snr_lo_db, cfg.data.acoustic_snr_hi_db);
    const double gn = noise_gain(clean.samples, noise.samples, snr);
    const AudioClip parts[] = {clean, noise};
    const double gains[] = {1.0, gn};
    auto mixture = audio::mix(parts, gains);
    const double pk = audio::peak_abs(mixture.samples);
    const double f = pk > 0.0 ? cfg.data.mixture_peak / pk : 1.0;
    data.push_back({scaled(mixture, f), {scaled(clean, f).samples, scaled(noise, f * gn).samples}});
  }
  return data;
}

void stage_pretrain(const Context& cx, json& info) {
  const auto& cfg = cx.cfg;
  const auto& t = cfg.train;
  const auto dir = cx.out / "corpus" / "ood";
  ssl::TrainLog log;

  nn::MaskNet sep(sep_net(cfg), audio::derive_seed(cfg.seed, kSeedMainInit, 0));
  ssl::PretrainConfig pc;
  pc.epochs = t.pretrain_epochs;
  pc.batch = t.pretrain_batch;
  pc.crop_s = t.pretrain_crop_s;
  pc.crops_per_item = t.pretrain_sep_crops;
  pc.adam = t.sep.adam;
  pc.loss = t.pretrain_sep_loss;
  pc.permutation_invariant = true;
  const auto rs = ssl::pretrain(sep, ood_sep_data(cfg, dir), pc, audio::derive_seed(cfg.seed, kSeedPretrainSep), log,
                                "pretrain-sep");
  nn::save_checkpoint(cx.out / "models" / "sep_main_pre.ckpt", sep);

  nn::MaskNet den(den_net(cfg), audio::derive_seed(cfg.seed, kSeedMainInit, 1));
  pc.crops_per_item = t.pretrain_den_crops;
  pc.adam = t.den.adam;
  pc.loss = t.pretrain_den_loss;
  pc.permutation_invariant = false;
  const auto rd = ssl::pretrain(den, ood_den_data(cfg, dir), pc, audio::derive_seed(cfg.seed, kSeedPretrainDen), log,
                                "pretrain-den");
  nn::save_checkpoint(cx.out / "models" / "den_main_pre.ckpt", den);
  log.write_csv(cx.out / "logs" / "pretrain.csv");
  info["sep_steps"] = rs.steps_run;
  info["den_steps"] = rd.steps_run;
}

ssl::Validator validator(const std::vector<Recording>& val, double active_db) {
  return [&val, active_db](const nn::MaskNet& m) { return eval_separator(m, val, active_db, false).median_sdri(); };
}

void stage_sep(const Context& cx, json& info, int round) {
  const auto& cfg = cx.cfg;
  const auto nc = sep_net(cfg);
  ssl::MainTargetPair pair;
  std::vector<AudioClip> pool;
  ssl::SepPhaseConfig pc = cfg.train.sep;
  std::uint64_t seed;
  if (round == 1) {
    pair.main = load_model(nc, cx.out / "models" / "sep_main_pre.ckpt");
    pair.target = nn::MaskNet(nc, audio::derive_seed(cfg.seed, kSeedSepTargetInit));
    pool = mixtures_of(load_split(cx.out, "train"));
    seed = audio::derive_seed(cfg.seed, kSeedSep1);
  } else {
    pair.main = load_model(nc, cx.out / "models" / "sep_main_r1.ckpt");
    pair.target = load_model(nc, cx.out / "models" / "sep_target_r1.ckpt");
    pool = load_pool(cx.out);
    pc.steps = cfg.train.sep_round2_steps;
    seed = audio::derive_seed(cfg.seed, kSeedSep2);
  }
  const auto val = load_split(cx.out, "val");
  ssl::TrainLog log;
  const std::string phase = "sep-round" + std::to_string(round);
  const auto res = ssl::run_sep_phase(pair, pool, pc, seed, log, phase, validator(val, pc.step.active_db));
  const std::string suffix = "_r" + std::to_string(round);
  nn::save_checkpoint(cx.out / "models" / ("sep_main" + suffix + ".ckpt"), pair.main);
  nn::save_checkpoint(cx.out / "models" / ("sep_target" + suffix + ".ckpt"), pair.target);
  log.write_csv(cx.out / "logs" / (phase + ".csv"));
  info["steps"] = res.steps_run;
  info["best_val_sdri_db"] = res.best_metric;
  info["first_loss_mean"] = res.first_loss_mean;
  info["last_loss_mean"] = res.last_loss_mean;
}

void stage_denoise(const Context& cx, json& info) {
  const auto& cfg = cx.cfg;
  const auto sep_main = load_model(sep_net(cfg), cx.out / "models" / "sep_main_r1.ckpt");
  std::vector<AudioClip> streams;
  for (const auto& r : load_split(cx.out, "train")) {
    const auto outs = sep_main.infer(r.mixture);
    const auto c = ssl::count_sources(signals(outs), r.mixture.samples, cfg.train.feedback.active_db);
    for (int m : c.active) streams.push_back(outs[static_cast<std::size_t>(m)]);
  }
  if (streams.size() < static_cast<std::size_t>(cfg.train.den.batch)) {
    throw DataError("too few active separated streams for denoiser training");
  }
  ssl::MainTargetPair pair;
  pair.main = load_model(den_net(cfg), cx.out / "models" / "den_main_pre.ckpt");
  pair.target = nn::MaskNet(den_net(cfg), audio::derive_seed(cfg.seed, kSeedDenTargetInit));
  ssl::TrainLog log;
  const auto res = ssl::run_den_phase(pair, streams, cfg.train.den, audio::derive_seed(cfg.seed, kSeedDen), log, "denoise");
  nn::save_checkpoint(cx.out / "models" / "den_main.ckpt", pair.main);
  nn::save_checkpoint(cx.out / "models" / "den_target.ckpt", pair.target);
  log.write_csv(cx.out / "logs" / "denoise.csv");
  info["streams"] = streams.size();
  info["steps"] = res.steps_run;
  info["first_loss_mean"] = res.first_loss_mean;
  info["last_loss_mean"] = res.last_loss_mean;
  info["max_shuffle_error"] = res.max_shuffle_error;
}

double pool_residual_noise(const std::vector<Recording>& recs) {
  double total = 0.0;
  for (const auto& r : recs) {
    total += residual_noise_fraction(r.mixture.samples, {r.sources[0].samples, r.sources[1].samples, r.noise.samples},
                                     {false, false, true});
  }
  return total / static_cast<double>(recs.size());
}

void stage_feedback(const Context& cx, json& info) {
  const auto& cfg = cx.cfg;
  const auto sep_main = load_model(sep_net(cfg), cx.out / "models" / "sep_main_r1.ckpt");
  const bool have_den = fs::exists(cx.out / "models" / "den_main.ckpt");
  nn::MaskNet den_main;
  if (have_den) den_main = load_model(den_net(cfg), cx.out / "models" / "den_main.ckpt");
  const auto train = load_split(cx.out, "train");
  const auto fb = ssl::feedback_cycle(sep_main, have_den ? &den_main : nullptr, mixtures_of(train), cfg.train.feedback,
                                      audio::derive_seed(cfg.seed, kSeedFeedback));
  const auto dir = cx.out / "pool";
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "path,origin_a,origin_b\n";
  double after = 0.0;
  for (std::size_t k = 0; k < fb.pool.size(); ++k) {
    const auto name = fmt_index("pool", k);
    const auto clip = normalized(fb.pool[k], cfg.data.mixture_peak);
    audio::write_wav(dir / name, clip);
    manifest << name << ',' << fb.origin[k].first << ',' << fb.origin[k].second << '\n';
    // Measured on the stored (quantized) pool entry against both origins' ground truth.
    const auto stored = audio::read_wav(dir / name);
    const auto& ra = train[static_cast<std::size_t>(fb.origin[k].first)];
    const auto& rb = train[static_cast<std::size_t>(fb.origin[k].second)];
    std::vector<Signal> comps = {ra.sources[0].samples, ra.sources[1].samples, ra.noise.samples};
    std::vector<bool> noise_flag = {false, false, true};
    if (fb.origin[k].second != fb.origin[k].first) {
      comps.insert(comps.end(), {rb.sources[0].samples, rb.sources[1].samples, rb.noise.samples});
      noise_flag.insert(noise_flag.end(), {false, false, true});
    }
    after += residual_noise_fraction(stored.samples, comps, noise_flag);
  }
  write_text(dir / "manifest.csv", manifest.str());
  info["streams"] = fb.streams;
  info["residual_noise_before"] = pool_residual_noise(train);
  info["residual_noise_after"] = after / static_cast<double>(fb.pool.size());
}

void add_row(std::vector<SummaryRow>& rows, const std::string& name, double v) { rows.push_back({name, v}); }

void stage_eval(const Context& cx, json& info, std::vector<SummaryRow>& rows) {
  const auto& cfg = cx.cfg;
  const auto evals = load_split(cx.out, "eval");
  const auto den_clips = load_den_eval(cx.out);
  const auto rep_dir = cx.out / "reports";
  const double active_db = cfg.train.sep.step.active_db;

  const auto base = eval_mixture_baseline(evals);
  base.write_csv(rep_dir / "baseline_mixture.csv");
  add_row(rows, "baseline_mixture_si_sdr_db_median", base.median().si_sdr_db);
  add_row(rows, "baseline_mixture_stoi_median", base.median().stoi);
  add_row(rows, "baseline_mixture_llr_median", base.median().llr);

  auto sep_rows = [&](const std::string& name, const fs::path& ckpt) {
    if (!fs::exists(ckpt)) return;
    const auto m = load_model(sep_net(cfg), ckpt);
    const auto ev = eval_separator(m, evals, active_db, true);
    ev.report.write_csv(rep_dir / (name + ".csv"));
    add_row(rows, name + "_si_sdri_db_median", ev.median_sdri());
    add_row(rows, name + "_si_sdr_db_median", ev.report.median().si_sdr_db);
    add_row(rows, name + "_stoi_median", ev.report.median().stoi);
    add_row(rows, name + "_llr_median", ev.report.median().llr);
  };
  const auto models = cx.out / "models";
  if (cfg.train.pretrain_epochs > 0) sep_rows("pretrained_main", models / "sep_main_pre.ckpt");
  if (cfg.train.sep.steps > 0) {
    sep_rows("sep_round1_target", models / "sep_target_r1.ckpt");
    sep_rows("sep_round1_main", models / "sep_main_r1.ckpt");
  }
  if (cfg.train.sep.steps > 0 && cfg.train.sep_round2_steps > 0) sep_rows("sep_round2_target", models / "sep_target_r2.ckpt");

  const auto den_in = eval_denoiser(nullptr, den_clips);
  den_in.report.write_csv(rep_dir / "den_input.csv");
  add_row(rows, "den_input_si_sdr_db_median", den_in.report.median().si_sdr_db);
  auto den_rows = [&](const std::string& name, const fs::path& ckpt) {
    if (!fs::exists(ckpt)) return;
    const auto m = load_model(den_net(cfg), ckpt);
    const auto ev = eval_denoiser(&m, den_clips);
    ev.report.write_csv(rep_dir / (name + ".csv"));
    add_row(rows, name + "_si_sdri_db_median", median(ev.sdri));
    add_row(rows, name + "_stoi_median", ev.report.median().stoi);
    add_row(rows, name + "_llr_median", ev.report.median().llr);
  };
  if (cfg.train.pretrain_epochs > 0) den_rows("den_pretrained_main", models / "den_main_pre.ckpt");
  if (cfg.train.sep.steps > 0 && cfg.train.den.steps > 0) {
    den_rows("den_main", models / "den_main.ckpt");
    den_rows("den_target", models / "den_target.ckpt");
  }
  info["rows"] = rows.size();
}

bool stage_enabled(const PipelineConfig& cfg, const std::string& stage) {
  if (stage == "sep-round1") return cfg.train.sep.steps > 0;
  if (stage == "denoise") return cfg.train.sep.steps > 0 && cfg.train.den.steps > 0;
  if (stage == "feedback" || stage == "sep-round2") return cfg.train.sep.steps > 0 && cfg.train.sep_round2_steps > 0;
  return true;
}

void run_stage(const Context& cx, const std::string& stage, std::vector<SummaryRow>* rows) {
  if (stage != "eval" && stage_done(cx.out, stage)) {
    log::info("stage " + stage + ": cached");
    return;
  }
  if (!stage_enabled(cx.cfg, stage)) return;
  log::info("stage " + stage + ": running");
  json info;
  info["stage"] = stage;
  nn::reset_consistency_error();
  try {
    if (stage == "gen-corpus") {
      stage_gen_corpus(cx, info);
    } else if (stage == "acquire") {
      stage_acquire(cx, info);
    } else if (stage == "pretrain") {
      stage_pretrain(cx, info);
    } else if (stage == "sep-round1") {
      stage_sep(cx, info, 1);
    } else if (stage == "denoise") {
      stage_denoise(cx, info);
    } else if (stage == "feedback") {
      stage_feedback(cx, info);
    } else if (stage == "sep-round2") {
      stage_sep(cx, info, 2);
    } else if (stage == "eval") {
      std::vector<SummaryRow> local;
      stage_eval(cx, info, rows ? *rows : local);
    } else {
      throw ArgumentError("unknown stage " + stage);
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
  info["max_consistency_error"] = nn::max_consistency_error();
  write_text(marker_path(cx.out, stage), info.dump(2) + "\n");
}

void write_summary(const fs::path& file, const std::vector<SummaryRow>& rows) {
  std::ostringstream s;
  s << "metric,value\n";
  for (const auto& r : rows) s << r.name << ',' << metrics::format_number(r.value) << '\n';
  write_text(file, s.str());
}

}  // namespace

const std::vector<std::string>& stage_names() { return kStages; }

double PipelineReport::value(const std::string& name) const {
  for (const auto& r : summary) {
    if (r.name == name) return r.value;
  }
  throw ArgumentError("report has no value " + name);
}

bool PipelineReport::has(const std::string& name) const {
  return std::any_of(summary.begin(), summary.end(), [&](const SummaryRow& r) { return r.name == name; });
}

std::vector<audio::ManifestRow> cmd_gen_corpus(const PipelineConfig& cfg, const fs::path& dir) {
  cfg.validate();
  std::vector<audio::ManifestRow> rows;
  for (auto [name, spec] : {std::pair{"indomain", in_domain_spec(cfg)}, std::pair{"ood", ood_spec(cfg)}}) {
    for (auto r : audio::write_corpus(spec, dir / name)) {
      r.path = std::string(name) + "/" + r.path;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

tag::IQTrace cmd_simulate(const PipelineConfig& cfg, const AudioClip& voice, const tag::ChannelParams& ch,
                          const fs::path& iq_out) {
  const auto iq = tag::synthesize_backscatter_iq(voice, cfg.tag, cfg.if_center_hz, cfg.iq_rate_hz);
  auto rx = tag::apply_channel(iq, ch);
  tag::write_iq(iq_out, rx);
  return rx;
}

AudioClip cmd_demod(const PipelineConfig& cfg, const fs::path& iq_in, const fs::path& wav_out) {
  const auto iq = tag::read_iq(iq_in);
  auto rec = reader::recover_voice(iq, cfg.demod);
  audio::write_wav(wav_out, rec.audio);
  return rec.audio;
}

std::vector<SweepPoint> snr_sweep(const PipelineConfig& cfg) {
  cfg.validate();
  const auto spec = split_spec(cfg, cfg.channel.sweep_clips, audio::derive_seed(cfg.seed, kSeedSweep));
  std::vector<AudioClip> voices, refs;
  for (int c = 0; c < cfg.channel.sweep_clips; ++c) {
    voices.push_back(normalized(audio::gen_voice(spec, static_cast<std::uint64_t>(c)), cfg.data.mixture_peak));
    refs.push_back(reader::band_limit(voices.back(), cfg.demod));
  }
  std::vector<SweepPoint> pts;
  for (double snr : cfg.channel.snr_sweep_db) {
    std::vector<double> vals;
    for (std::size_t c = 0; c < voices.size(); ++c) {
      auto ch = draw_channel(cfg, audio::derive_seed(cfg.seed, kSeedSweep, c + 1));
      ch.snr_db = snr;
      const auto rec = over_the_air(cfg, voices[c], ch);
      vals.push_back(capped_sdr(rec, refs[c]));
    }
    pts.push_back({snr, median(vals)});
  }
  return pts;
}

void write_sweep_csv(const fs::path& file, const std::vector<SweepPoint>& pts) {
  std::ostringstream s;
  s << "snr_db,median_si_sdr_db\n";
  for (const auto& p : pts) s << metrics::format_number(p.snr_db) << ',' << metrics::format_number(p.median_si_sdr_db) << '\n';
  write_text(file, s.str());
}

void run_until(const PipelineConfig& cfg, const fs::path& out, const std::string& last_stage) {
  if (std::find(kStages.begin(), kStages.end(), last_stage) == kStages.end()) {
    throw ArgumentError("unknown stage " + last_stage);
  }
  cfg.validate();
  fs::create_directories(out);
  write_text(out / "config.json", dump_config(cfg));
  const Context cx{cfg, out};
  for (const auto& s : kStages) {
    if (s == "eval") break;
    run_stage(cx, s, nullptr);
    if (s == last_stage) return;
  }
  cmd_pipeline(cfg, out);
}

PipelineReport cmd_pipeline(const PipelineConfig& cfg, const fs::path& out) {
  cfg.validate();
  fs::create_directories(out);
  write_text(out / "config.json", dump_config(cfg));
  const Context cx{cfg, out};
  PipelineReport rep;
  for (const auto& s : kStages) {
    if (s != "eval") run_stage(cx, s, nullptr);
  }
  run_stage(cx, "eval", &rep.summary);

  json report;
  report["seed"] = cfg.seed;
  for (const auto& s : kStages) {
    if (!stage_done(out, s)) continue;
    const auto info = read_json(marker_path(out, s));
    report["stages"][s] = info;
    rep.max_consistency_error = std::max(rep.max_consistency_error, info.value("max_consistency_error", 0.0));
    rep.max_shuffle_sum_error = std::max(rep.max_shuffle_sum_error, info.value("max_shuffle_error", 0.0));
    if (s == "feedback") {
      add_row(rep.summary, "pool_residual_noise_before", info.at("residual_noise_before").get<double>());
      add_row(rep.summary, "pool_residual_noise_after", info.at("residual_noise_after").get<double>());
    }
    if (s == "sep-round1" || s == "sep-round2") {
      const std::string k = s == "sep-round1" ? "sep_round1" : "sep_round2";
      add_row(rep.summary, k + "_steps", info.at("steps").get<double>());
      add_row(rep.summary, k + "_loss_first20", info.at("first_loss_mean").get<double>());
      add_row(rep.summary, k + "_loss_last20", info.at("last_loss_mean").get<double>());
    }
    if (s == "denoise") {
      add_row(rep.summary, "den_steps", info.at("steps").get<double>());
      add_row(rep.summary, "den_loss_first20", info.at("first_loss_mean").get<double>());
      add_row(rep.summary, "den_loss_last20", info.at("last_loss_mean").get<double>());
    }
  }
  report["max_consistency_error"] = sci(rep.max_consistency_error);
  report["max_shuffle_sum_error"] = sci(rep.max_shuffle_sum_error);
  write_text(out / "report.json", report.dump(2) + "\n");
  write_summary(out / "summary.csv", rep.summary);
  return rep;
}

metrics::MetricReport cmd_eval(const fs::path& est_dir, const fs::path& ref_dir, const fs::path& csv_out) {
  auto wavs = [](const fs::path& d) {
    std::vector<std::string> names;
    if (fs::is_directory(d)) {
      for (const auto& e : fs::directory_iterator(d)) {
        if (e.is_regular_file() && e.path().extension() == ".wav") names.push_back(e.path().filename().string());
      }
    }
    std::sort(names.begin(), names.end());
    return names;
  };
  const auto refs = wavs(ref_dir);
  const auto ests = wavs(est_dir);
  metrics::MetricReport rep;
  for (const auto& name : ests) {
    if (!std::binary_search(refs.begin(), refs.end(), name)) log::warn("eval: no reference for " + name);
  }
  for (const auto& name : refs) {
    if (!std::binary_search(ests.begin(), ests.end(), name)) {
      log::warn("eval: no estimate for " + name);
      continue;
    }
    try {
      auto est = audio::read_wav(est_dir / name);
      auto ref = audio::read_wav(ref_dir / name);
      if (est.sample_rate_hz != ref.sample_rate_hz) {
        log::warn("eval: sample rate mismatch for " + name + ", skipped");
        continue;
      }
      if (est.size() != ref.size()) {
        log::warn("eval: length mismatch for " + name + ", truncating to the shorter");
        const auto n = std::min(est.size(), ref.size());
        est.samples.resize(n);
        ref.samples.resize(n);
      }
      auto item = metrics::evaluate(fs::path(name).stem().string(), est, ref);
      rep.items.push_back(std::move(item));
    } catch (const Error& e) {
      log::warn("eval: " + name + ": " + e.what());
    }
  }
  if (rep.items.empty()) log::warn("eval: no matched pairs");
  rep.write_csv(csv_out);
  return rep;
}

double residual_noise_fraction(std::span<const double> mixture, const std::vector<std::vector<double>>& components,
                               const std::vector<bool>& is_noise) {
  if (components.size() != is_noise.size()) throw ArgumentError("residual_noise_fraction: flag count mismatch");
  const auto n = static_cast<Eigen::Index>(mixture.size());
  const auto k = static_cast<Eigen::Index>(components.size());
  Eigen::MatrixXd a(n, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (static_cast<Eigen::Index>(components[static_cast<std::size_t>(j)].size()) != n) {
      throw ArgumentError("residual_noise_fraction: length mismatch");
    }
    a.col(j) = Eigen::Map<const Eigen::VectorXd>(components[static_cast<std::size_t>(j)].data(), n);
  }
  const Eigen::Map<const Eigen::VectorXd> y(mixture.data(), n);
  const double ey = y.squaredNorm();
  if (ey == 0.0) return 0.0;
  const Eigen::VectorXd coef = a.completeOrthogonalDecomposition().solve(y);
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (is_noise[static_cast<std::size_t>(j)]) noise += coef(j) * a.col(j);
  }
  return noise.squaredNorm() / ey;
}

}  // namespace rfvoice::harness
