#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rfvoice/audio/corpus.hpp"
#include "rfvoice/reader/frontend.hpp"
#include "rfvoice/ssl/ssl.hpp"
#include "rfvoice/tag/tag_sim.hpp"

namespace rfvoice::harness {

inline constexpr int kConfigVersion = 1;

struct ChannelSpec {
  std::optional<double> snr_db = 30.0;  // null in the file: noiseless
  double attenuation_db = 0.0;
  double cfo_max_hz = 500.0;            // per-recording offset ~ U[-max, max]
  double drift_max_hz_per_s = 10.0;     // per-recording drift ~ U[-max, max]
  std::vector<double> snr_sweep_db{40.0, 30.0, 20.0, 10.0, 0.0};
  int sweep_clips = 8;

  void validate() const;
};

struct DataSpec {
  int train_sources = 200;  // in-domain; two sources per mixture
  int val_sources = 20;
  int eval_sources = 50;
  int ood_sources = 200;    // out-of-domain pretraining corpus
  double acoustic_snr_lo_db = 0.0;
  double acoustic_snr_hi_db = 10.0;
  double mixture_peak = 0.9;

  void validate() const;
};

struct TrainSpec {
  nn::FrontEnd front_end = nn::FrontEnd::Learned;
  int sep_heads = 4;
  // supervised out-of-domain pretraining
  int pretrain_epochs = 5;
  int pretrain_batch = 16;
  double pretrain_crop_s = 1.0;
  int pretrain_sep_crops = 5;  // crops per out-of-domain mixture per epoch
  int pretrain_den_crops = 8;  // crops per out-of-domain noisy voice per epoch
  ssl::LossConfig pretrain_sep_loss{ssl::LossKind::NegSnr, 25.0, 1e-3};
  ssl::LossConfig pretrain_den_loss{ssl::LossKind::NegSiSdr, 25.0, 1e-3};
  // self-supervised phases
  ssl::SepPhaseConfig sep;
  int sep_round2_steps = 200;
  ssl::DenPhaseConfig den;
  ssl::FeedbackConfig feedback;

  void validate() const;
};

struct PipelineConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 7;
  tag::TagParams tag;
  double if_center_hz = 40000.0;
  double iq_rate_hz = 192000.0;
  ChannelSpec channel;
  reader::DemodConfig demod;
  audio::CorpusSpec corpus;  // voice/noise generator settings; n_items and seed are set per split
  DataSpec data;
  TrainSpec train;

  void validate() const;  // throws ArgumentError naming the offending field
};

// Desk-scale defaults.
PipelineConfig desk_preset();

// Versioned JSON. Keys absent from the file keep the preset value; unknown
// keys and a wrong version are rejected with ArgumentError.
PipelineConfig parse_config(const std::string& text, const PipelineConfig& base = desk_preset());
PipelineConfig load_config(const std::filesystem::path& path, const PipelineConfig& base = desk_preset());
std::string dump_config(const PipelineConfig& cfg);

}  // namespace rfvoice::harness
