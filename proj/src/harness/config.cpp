#include "rfvoice/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rfvoice/error.hpp"

namespace rfvoice::harness {

using json = nlohmann::ordered_json;

namespace {

// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ArgumentError("config: " + path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ArgumentError("config: " + path_ + "." + key + ": " + e.what());
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0.0;
    get(key, v);
    out = v;
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string child(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ArgumentError("config: unknown key " + path_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string loss_name(ssl::LossKind k) { return k == ssl::LossKind::NegSnr ? "neg_snr" : "neg_si_sdr"; }

ssl::LossKind parse_loss(const std::string& s) {
  if (s == "neg_snr") return ssl::LossKind::NegSnr;
  if (s == "neg_si_sdr") return ssl::LossKind::NegSiSdr;
  throw ArgumentError("config: unknown loss '" + s + "' (neg_snr | neg_si_sdr)");
}

json loss_json(const ssl::LossConfig& l) { return {{"kind", loss_name(l.kind)}, {"cap_db", l.cap_db}, {"mu", l.mu}}; }

void read_loss(Section& parent, const char* key, ssl::LossConfig& l) {
  if (!parent.has(key)) return;
  Section s(parent.at(key), parent.child(key));
  std::string kind = loss_name(l.kind);
  s.get("kind", kind);
  l.kind = parse_loss(kind);
  s.get("cap_db", l.cap_db);
  s.get("mu", l.mu);
  s.finish();
}

json adam_json(const nn::AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"clip_norm", a.clip_norm}};
}

void read_adam(Section& parent, const char* key, nn::AdamConfig& a) {
  if (!parent.has(key)) return;
  Section s(parent.at(key), parent.child(key));
  s.get("lr", a.lr);
  s.get("beta1", a.beta1);
  s.get("beta2", a.beta2);
  s.get("eps", a.eps);
  s.get("clip_norm", a.clip_norm);
  s.finish();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError("config: " + what);
}

}  // namespace

void ChannelSpec::validate() const {
  require(!snr_db || std::isfinite(*snr_db), "channel.snr_db must be finite or null");
  require(attenuation_db >= 0.0, "channel.attenuation_db must be >= 0");
  require(cfo_max_hz >= 0.0 && drift_max_hz_per_s >= 0.0, "channel CFO ranges must be >= 0");
  require(!snr_sweep_db.empty(), "channel.snr_sweep_db must be non-empty");
  for (double s : snr_sweep_db) require(std::isfinite(s), "channel.snr_sweep_db entries must be finite");
  require(sweep_clips >= 1, "channel.sweep_clips must be >= 1");
}

void DataSpec::validate() const {
  require(train_sources >= 4 && train_sources % 2 == 0, "data.train_sources must be even and >= 4");
  require(val_sources >= 2 && val_sources % 2 == 0, "data.val_sources must be even and >= 2");
  require(eval_sources >= 2 && eval_sources % 2 == 0, "data.eval_sources must be even and >= 2");
  require(ood_sources >= 2, "data.ood_sources must be >= 2");
  require(acoustic_snr_lo_db <= acoustic_snr_hi_db, "data acoustic SNR range is reversed");
  require(mixture_peak > 0.0 && mixture_peak <= 1.0, "data.mixture_peak must lie in (0, 1]");
}

void TrainSpec::validate() const {
  require(sep_heads >= 2, "train.sep_heads must be >= 2");
  require(pretrain_epochs >= 0 && pretrain_batch >= 1 && pretrain_crop_s > 0.0 &&
              pretrain_sep_crops >= 1 && pretrain_den_crops >= 1,
          "train pretraining settings invalid");
  require(sep.steps >= 0 && sep.batch >= 1 && sep.crop_s > 0.0, "train.sep steps/batch/crop invalid");
  require(sep.lambda >= 0.0 && sep.lambda <= 1.0, "train.sep.lambda must lie in [0, 1]");
  require(den.step.lambda >= 0.0 && den.step.lambda <= 1.0, "train.den.lambda must lie in [0, 1]");
  require(sep_round2_steps >= 0, "train.sep_round2_steps must be >= 0");
  require(den.steps >= 0 && den.batch >= 1 && den.crop_s > 0.0, "train.den steps/batch/crop invalid");
  require(sep.step.weights.lo > 0.0 && sep.step.weights.lo <= sep.step.weights.hi, "train remix weight range invalid");
  require(sep.adam.lr >= 0.0 && den.adam.lr >= 0.0, "learning rates must be >= 0");
}

void PipelineConfig::validate() const {
  require(version == kConfigVersion, "unsupported version " + std::to_string(version));
  tag.validate();
  require(if_center_hz > 0.0 && iq_rate_hz > 2.0 * if_center_hz, "iq_rate_hz must exceed twice if_center_hz");
  channel.validate();
  demod.validate();
  require(std::abs(demod.if_center_hz - if_center_hz) < 1e-9, "demod.if_center_hz must equal if_center_hz");
  corpus.validate();
  data.validate();
  train.validate();
}

PipelineConfig desk_preset() {
  PipelineConfig c;
  c.corpus.duration_s = 5.0;
  c.corpus.sample_rate_hz = 16000.0;
  c.corpus.noise_kinds = {audio::NoiseKind::White, audio::NoiseKind::Babble, audio::NoiseKind::Impulsive,
                          audio::NoiseKind::Tonal};
  c.train.sep.steps = 300;
  c.train.sep.batch = 16;
  c.train.sep.crop_s = 1.0;
  c.train.sep.eval_every = 50;
  c.train.sep.ema_every = 50;
  c.train.sep.lambda = 0.99;
  c.train.sep.patience = 5;
  c.train.den.steps = 1000;
  c.train.den.batch = 2;
  c.train.den.crop_s = 1.0;
  // Slow teacher: with a randomly initialized target, faster rates collapse the denoiser.
  c.train.den.step.lambda = 0.9999;
  return c;
}

std::string dump_config(const PipelineConfig& c) {
  json j;
  j["version"] = c.version;
  j["seed"] = c.seed;
  j["tag"] = {{"inductance_h", c.tag.inductance_h}, {"c0_f", c.tag.c0_f},         {"phi_t_v", c.tag.phi_t_v},
              {"gamma12", c.tag.gamma12},           {"f_b_hz", c.tag.f_b_hz},     {"piezo_sensitivity_v", c.tag.piezo_sensitivity_v}};
  j["if_center_hz"] = c.if_center_hz;
  j["iq_rate_hz"] = c.iq_rate_hz;
  j["channel"] = {{"snr_db", c.channel.snr_db ? json(*c.channel.snr_db) : json(nullptr)},
                  {"attenuation_db", c.channel.attenuation_db},
                  {"cfo_max_hz", c.channel.cfo_max_hz},
                  {"drift_max_hz_per_s", c.channel.drift_max_hz_per_s},
                  {"snr_sweep_db", c.channel.snr_sweep_db},
                  {"sweep_clips", c.channel.sweep_clips}};
  j["demod"] = {{"frame_len_s", c.demod.frame_len_s},   {"delta_samples", c.demod.delta_samples},
                {"if_center_hz", c.demod.if_center_hz}, {"audio_rate_hz", c.demod.audio_rate_hz},
                {"band_low_hz", c.demod.band_low_hz},   {"band_high_hz", c.demod.band_high_hz},
                {"cfo_search_hz", c.demod.cfo_search_hz}, {"bandpass_taps", c.demod.bandpass_taps},
                {"silence_floor_hz", c.demod.silence_floor_hz}};
  std::vector<std::string> kinds;
  for (auto k : c.corpus.noise_kinds) kinds.emplace_back(audio::to_string(k));
  j["corpus"] = {{"duration_s", c.corpus.duration_s},
                 {"sample_rate_hz", c.corpus.sample_rate_hz},
                 {"pitch_lo_hz", c.corpus.voice.pitch_lo_hz},
                 {"pitch_hi_hz", c.corpus.voice.pitch_hi_hz},
                 {"harmonics", c.corpus.voice.harmonics},
                 {"envelope_rate_lo_hz", c.corpus.voice.envelope_rate_lo_hz},
                 {"envelope_rate_hi_hz", c.corpus.voice.envelope_rate_hi_hz},
                 {"voice_peak", c.corpus.voice.peak},
                 {"noise_kinds", kinds},
                 {"noise_level_rms", c.corpus.noise.level_rms},
                 {"click_density_hz", c.corpus.noise.click_density_hz}};
  j["data"] = {{"train_sources", c.data.train_sources},
               {"val_sources", c.data.val_sources},
               {"eval_sources", c.data.eval_sources},
               {"ood_sources", c.data.ood_sources},
               {"acoustic_snr_lo_db", c.data.acoustic_snr_lo_db},
               {"acoustic_snr_hi_db", c.data.acoustic_snr_hi_db},
               {"mixture_peak", c.data.mixture_peak}};
  const auto& t = c.train;
  j["train"] = {
      {"front_end", t.front_end == nn::FrontEnd::Learned ? "learned" : "stft"},
      {"sep_heads", t.sep_heads},
      {"pretrain_epochs", t.pretrain_epochs},
      {"pretrain_batch", t.pretrain_batch},
      {"pretrain_crop_s", t.pretrain_crop_s},
      {"pretrain_sep_crops", t.pretrain_sep_crops},
      {"pretrain_den_crops", t.pretrain_den_crops},
      {"pretrain_sep_loss", loss_json(t.pretrain_sep_loss)},
      {"pretrain_den_loss", loss_json(t.pretrain_den_loss)},
      {"sep",
       {{"steps", t.sep.steps},
        {"round2_steps", t.sep_round2_steps},
        {"batch", t.sep.batch},
        {"crop_s", t.sep.crop_s},
        {"adam", adam_json(t.sep.adam)},
        {"lambda", t.sep.lambda},
        {"ema_every", t.sep.ema_every},
        {"eval_every", t.sep.eval_every},
        {"patience", t.sep.patience},
        {"loss", loss_json(t.sep.step.loss)},
        {"weight_lo", t.sep.step.weights.lo},
        {"weight_hi", t.sep.step.weights.hi},
        {"active_db", t.sep.step.active_db}}},
      {"den",
       {{"steps", t.den.steps},
        {"batch", t.den.batch},
        {"crop_s", t.den.crop_s},
        {"adam", adam_json(t.den.adam)},
        {"halve_every_epochs", t.den.halve_every_epochs},
        {"lambda", t.den.step.lambda},
        {"loss", loss_json(t.den.step.loss)}}},
      {"feedback",
       {{"weight_lo", t.feedback.weights.lo}, {"weight_hi", t.feedback.weights.hi}, {"active_db", t.feedback.active_db}}}};
  return j.dump(2) + "\n";
}

PipelineConfig parse_config(const std::string& text, const PipelineConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("config: parse error: ") + e.what());
  }
  PipelineConfig c = base;
  Section root(j, "config");
  int version = -1;
  root.get("version", version);
  if (version != kConfigVersion) {
    throw ArgumentError("config: version must be " + std::to_string(kConfigVersion) + " (got " +
                        std::to_string(version) + ")");
  }
  c.version = version;
  root.get("seed", c.seed);
  root.get("if_center_hz", c.if_center_hz);
  root.get("iq_rate_hz", c.iq_rate_hz);
  c.demod.if_center_hz = c.if_center_hz;
  if (root.has("tag")) {
    Section s(root.at("tag"), "config.tag");
    s.get("inductance_h", c.tag.inductance_h);
    s.get("c0_f", c.tag.c0_f);
    s.get("phi_t_v", c.tag.phi_t_v);
    s.get("gamma12", c.tag.gamma12);
    s.get("f_b_hz", c.tag.f_b_hz);
    s.get("piezo_sensitivity_v", c.tag.piezo_sensitivity_v);
    s.finish();
  }
  if (root.has("channel")) {
    Section s(root.at("channel"), "config.channel");
    s.get_optional("snr_db", c.channel.snr_db);
    s.get("attenuation_db", c.channel.attenuation_db);
    s.get("cfo_max_hz", c.channel.cfo_max_hz);
    s.get("drift_max_hz_per_s", c.channel.drift_max_hz_per_s);
    s.get("snr_sweep_db", c.channel.snr_sweep_db);
    s.get("sweep_clips", c.channel.sweep_clips);
    s.finish();
  }
  if (root.has("demod")) {
    Section s(root.at("demod"), "config.demod");
    s.get("frame_len_s", c.demod.frame_len_s);
    s.get("delta_samples", c.demod.delta_samples);
    s.get("if_center_hz", c.demod.if_center_hz);
    s.get("audio_rate_hz", c.demod.audio_rate_hz);
    s.get("band_low_hz", c.demod.band_low_hz);
    s.get("band_high_hz", c.demod.band_high_hz);
    s.get("cfo_search_hz", c.demod.cfo_search_hz);
    s.get("bandpass_taps", c.demod.bandpass_taps);
    s.get("silence_floor_hz", c.demod.silence_floor_hz);
    s.finish();
  }
  if (root.has("corpus")) {
    Section s(root.at("corpus"), "config.corpus");
    s.get("duration_s", c.corpus.duration_s);
    s.get("sample_rate_hz", c.corpus.sample_rate_hz);
    s.get("pitch_lo_hz", c.corpus.voice.pitch_lo_hz);
    s.get("pitch_hi_hz", c.corpus.voice.pitch_hi_hz);
    s.get("harmonics", c.corpus.voice.harmonics);
    s.get("envelope_rate_lo_hz", c.corpus.voice.envelope_rate_lo_hz);
    s.get("envelope_rate_hi_hz", c.corpus.voice.envelope_rate_hi_hz);
    s.get("voice_peak", c.corpus.voice.peak);
    if (s.has("noise_kinds")) {
      std::vector<std::string> kinds;
      s.get("noise_kinds", kinds);
      c.corpus.noise_kinds.clear();
      for (const auto& k : kinds) c.corpus.noise_kinds.push_back(audio::parse_noise_kind(k));
    }
    s.get("noise_level_rms", c.corpus.noise.level_rms);
    s.get("click_density_hz", c.corpus.noise.click_density_hz);
    s.finish();
  }
  if (root.has("data")) {
    Section s(root.at("data"), "config.data");
    s.get("train_sources", c.data.train_sources);
    s.get("val_sources", c.data.val_sources);
    s.get("eval_sources", c.data.eval_sources);
    s.get("ood_sources", c.data.ood_sources);
    s.get("acoustic_snr_lo_db", c.data.acoustic_snr_lo_db);
    s.get("acoustic_snr_hi_db", c.data.acoustic_snr_hi_db);
    s.get("mixture_peak", c.data.mixture_peak);
    s.finish();
  }
  if (root.has("train")) {
    Section s(root.at("train"), "config.train");
    auto& t = c.train;
    std::string front = t.front_end == nn::FrontEnd::Learned ? "learned" : "stft";
    s.get("front_end", front);
    if (front == "learned") {
      t.front_end = nn::FrontEnd::Learned;
    } else if (front == "stft") {
      t.front_end = nn::FrontEnd::Stft;
    } else {
      throw ArgumentError("config: train.front_end must be learned or stft");
    }
    s.get("sep_heads", t.sep_heads);
    s.get("pretrain_epochs", t.pretrain_epochs);
    s.get("pretrain_batch", t.pretrain_batch);
    s.get("pretrain_crop_s", t.pretrain_crop_s);
    s.get("pretrain_sep_crops", t.pretrain_sep_crops);
    s.get("pretrain_den_crops", t.pretrain_den_crops);
    read_loss(s, "pretrain_sep_loss", t.pretrain_sep_loss);
    read_loss(s, "pretrain_den_loss", t.pretrain_den_loss);
    if (s.has("sep")) {
      Section p(s.at("sep"), "config.train.sep");
      p.get("steps", t.sep.steps);
      p.get("round2_steps", t.sep_round2_steps);
      p.get("batch", t.sep.batch);
      p.get("crop_s", t.sep.crop_s);
      read_adam(p, "adam", t.sep.adam);
      p.get("lambda", t.sep.lambda);
      p.get("ema_every", t.sep.ema_every);
      p.get("eval_every", t.sep.eval_every);
      p.get("patience", t.sep.patience);
      read_loss(p, "loss", t.sep.step.loss);
      p.get("weight_lo", t.sep.step.weights.lo);
      p.get("weight_hi", t.sep.step.weights.hi);
      p.get("active_db", t.sep.step.active_db);
      p.finish();
    }
    if (s.has("den")) {
      Section p(s.at("den"), "config.train.den");
      p.get("steps", t.den.steps);
      p.get("batch", t.den.batch);
      p.get("crop_s", t.den.crop_s);
      read_adam(p, "adam", t.den.adam);
      p.get("halve_every_epochs", t.den.halve_every_epochs);
      p.get("lambda", t.den.step.lambda);
      read_loss(p, "loss", t.den.step.loss);
      p.finish();
    }
    if (s.has("feedback")) {
      Section p(s.at("feedback"), "config.train.feedback");
      p.get("weight_lo", t.feedback.weights.lo);
      p.get("weight_hi", t.feedback.weights.hi);
      p.get("active_db", t.feedback.active_db);
      p.finish();
    }
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path, const PipelineConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

}  // namespace rfvoice::harness
