#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rfvoice/audio/clip.hpp"
#include "rfvoice/nn/adam.hpp"
#include "rfvoice/nn/model.hpp"

namespace rfvoice::ssl {

using audio::AudioClip;
using Rng = std::mt19937_64;
using Signal = std::vector<double>;

// Uniform draws with a fixed, library-independent mapping from the engine.
double uniform(Rng& rng, double lo, double hi);
std::size_t uniform_index(Rng& rng, std::size_t n);

// ---- mixtures ---------------------------------------------------------------

AudioClip make_mom(const AudioClip& x1, const AudioClip& x2);

struct Remix {
  AudioClip mixture;
  double w_a = 1.0;
  double w_b = 1.0;
};

struct RemixWeights {
  double lo = 0.5;
  double hi = 1.0;
};

// w_a, w_b ~ U[lo, hi] independently unless `forced` is given.
Remix remix_selected(const AudioClip& s_a, const AudioClip& s_b, Rng& rng, const RemixWeights& range = {},
                     std::optional<std::pair<double, double>> forced = std::nullopt);

// ---- losses -----------------------------------------------------------------

enum class LossKind { NegSiSdr, NegSnr };

struct LossConfig {
  LossKind kind = LossKind::NegSiSdr;
  double cap_db = 25.0;
  double mu = 1e-3;  // energy penalty on unassigned outputs and zero references
};

// l(est, ref); an all-zero reference falls back to mu * |est|^2.
double pair_loss(std::span<const double> est, std::span<const double> ref, const LossConfig& cfg,
                 std::span<double> grad = {});
double energy_penalty(std::span<const double> est, double mu, std::span<double> grad = {});

struct Assignment {
  std::vector<int> output_of;  // output index assigned to each reference
  double loss = 0.0;
};

// Minimum over injective maps of references to outputs of
//   sum_j l(out[pi(j)], ref[j]) + sum_{m unassigned} mu |out[m]|^2.
// Candidates are enumerated lexicographically in pi; the first minimum wins.
Assignment sep_loss(const std::vector<Signal>& outputs, const std::vector<Signal>& refs, const LossConfig& cfg);
// Same value as a differentiable graph node; `chosen` receives the assignment.
nn::Graph::Var sep_loss(nn::Graph& g, const std::vector<nn::Graph::Var>& outputs, const std::vector<Signal>& refs,
                        const LossConfig& cfg, Assignment* chosen = nullptr);

// sum_i [ l(speech_est_i, speech_ref_i) + l(noise_est_i, noise_ref_i) ].
double denoise_loss(const std::vector<Signal>& speech_est, const std::vector<Signal>& noise_est,
                    const std::vector<Signal>& speech_ref, const std::vector<Signal>& noise_ref, const LossConfig& cfg);
nn::Graph::Var denoise_loss(nn::Graph& g, const std::vector<nn::Graph::Var>& speech_est,
                            const std::vector<nn::Graph::Var>& noise_est, const std::vector<Signal>& speech_ref,
                            const std::vector<Signal>& noise_ref, const LossConfig& cfg);

// ---- EMA, shuffling, counting -----------------------------------------------

// main <- lambda main + (1 - lambda) target, element-wise; exact copy laws at 0 and 1.
void ema_update(nn::ParamSet& main, const nn::ParamSet& target, double lambda);
std::vector<double> ema_update(std::span<const double> main, std::span<const double> target, double lambda);

bool is_permutation(std::span<const int> p);
bool is_derangement(std::span<const int> p);
// Uniform over derangements for n >= 2 (rejection sampling); {0} for n = 1.
std::vector<int> random_derangement(int n, Rng& rng);

// s~_i = c_i + n_{p(i)}. Throws ArgumentError when p is not a permutation of the indices.
std::vector<Signal> denoise_remix_batch(const std::vector<Signal>& speech, const std::vector<Signal>& noise,
                                        std::span<const int> perm);

struct SourceCount {
  int count = 0;
  std::vector<int> active;
};
// Output m is active when its level relative to the mixture exceeds threshold_db.
SourceCount count_sources(const std::vector<Signal>& outputs, std::span<const double> mixture,
                          double threshold_db = -25.0);

// ---- training ---------------------------------------------------------------

struct MainTargetPair {
  nn::MaskNet main;
  nn::MaskNet target;
};

struct LogRow {
  long step = 0;
  std::string phase;
  double loss = 0.0;
  double metric = std::numeric_limits<double>::quiet_NaN();
};

// Append-only training log.
struct TrainLog {
  std::vector<LogRow> rows;
  void add(long step, const std::string& phase, double loss, double metric = std::numeric_limits<double>::quiet_NaN());
  void write_csv(const std::filesystem::path& file) const;
};

struct SepStepConfig {
  LossConfig loss;
  RemixWeights weights;
  double active_db = -25.0;
};

struct SepBatchItem {
  AudioClip x1;
  AudioClip x2;
};

// Main separates x1 and x2 (no gradient), one active output of each is drawn
// uniformly, the weighted remix is separated by the target, and the target
// takes one Adam step on the batch-mean sep_loss. Returns the batch mean.
// Throws DivergenceError on a non-finite loss.
double sep_train_step(MainTargetPair& pair, const std::vector<SepBatchItem>& batch, nn::AdamState& opt, Rng& rng,
                      const SepStepConfig& cfg);

struct DenStepConfig {
  LossConfig loss;
  double lambda = 0.99;  // EMA after the step
};

// Main splits each clip, noise estimates are deranged and remixed, the
// target is trained on denoise_loss, then ema_update(main, target, lambda).
// `shuffle_error` receives max_k |sum_i s~_i[k] - sum_i (c_i[k] + n_i[k])|
// relative to the largest batch-sum magnitude.
double denoise_train_step(MainTargetPair& pair, const std::vector<AudioClip>& batch, nn::AdamState& opt, Rng& rng,
                          const DenStepConfig& cfg, double* shuffle_error = nullptr);

double shuffle_sum_error(const std::vector<Signal>& speech, const std::vector<Signal>& noise,
                         const std::vector<Signal>& remixed);

// Random crop of `len` samples (zero-padded when the clip is shorter). len 0
// returns the whole clip.
AudioClip random_crop(const AudioClip& clip, std::size_t len, Rng& rng);

struct SepPhaseConfig {
  int steps = 500;
  int batch = 16;
  double crop_s = 1.0;  // <= 0: whole clips
  nn::AdamConfig adam;
  double lambda = 0.99;
  int ema_every = 50;
  int eval_every = 50;
  int patience = 5;  // evaluations without improvement
  SepStepConfig step;
};

// Validation score of a model (higher is better).
using Validator = std::function<double(const nn::MaskNet&)>;

struct PhaseResult {
  int steps_run = 0;
  double best_metric = std::numeric_limits<double>::quiet_NaN();
  double first_loss_mean = 0.0;  // over the first 20 steps
  double last_loss_mean = 0.0;   // over the last 20 steps
  double max_shuffle_error = 0.0;
};

// Trains pair.target on random (x1, x2) draws from `pool` with EMA into
// pair.main every ema_every steps. With a validator, the target parameters
// of the best evaluation (including the initial one) are restored at the end.
PhaseResult run_sep_phase(MainTargetPair& pair, const std::vector<AudioClip>& pool, const SepPhaseConfig& cfg,
                          std::uint64_t seed, TrainLog& log, const std::string& phase_name,
                          const Validator& validate = {});

struct DenPhaseConfig {
  int steps = 500;
  int batch = 2;
  double crop_s = 1.0;  // <= 0: whole clips
  nn::AdamConfig adam;
  int halve_every_epochs = 6;
  DenStepConfig step;
};

PhaseResult run_den_phase(MainTargetPair& pair, const std::vector<AudioClip>& clips, const DenPhaseConfig& cfg,
                          std::uint64_t seed, TrainLog& log, const std::string& phase_name);

// ---- supervised pretraining -------------------------------------------------

struct LabeledMixture {
  AudioClip mixture;
  std::vector<Signal> refs;  // ground-truth components summing to the mixture
};

struct PretrainConfig {
  int epochs = 5;
  int batch = 16;
  double crop_s = 0.0;     // > 0: train on random crops of this length
  int crops_per_item = 1;  // crops drawn from every item per epoch
  nn::AdamConfig adam;
  LossConfig loss;
  // Minimum over reference-to-output assignments; otherwise reference j
  // scores output j and extra outputs take the energy penalty.
  bool permutation_invariant = true;
};

// Supervised training of `model` on labeled examples. Every epoch draws
// crops_per_item aligned crops from each item and visits them in shuffled
// order. Zero epochs leave the model unchanged.
PhaseResult pretrain(nn::MaskNet& model, const std::vector<LabeledMixture>& data, const PretrainConfig& cfg,
                     std::uint64_t seed, TrainLog& log, const std::string& phase_name);

// ---- feedback ---------------------------------------------------------------

struct FeedbackConfig {
  RemixWeights weights;
  double active_db = -25.0;
};

struct FeedbackResult {
  std::vector<AudioClip> pool;                 // same size as the corpus
  std::vector<std::pair<int, int>> origin;     // corpus items behind each pool entry
  std::size_t streams = 0;                     // active separated streams found
};

// Separates every corpus mixture, denoises each active output (den == nullptr
// keeps it as is) and cross-remixes streams of different items with random
// weights. Throws DataError when no active stream exists.
FeedbackResult feedback_cycle(const nn::MaskNet& sep_main, const nn::MaskNet* den_main,
                              const std::vector<AudioClip>& corpus, const FeedbackConfig& cfg, std::uint64_t seed);

// Best injective matching of references to active outputs (all outputs when
// fewer than refs.size() are active), maximizing the summed SI-SDR. Returns
// per-reference SI-SDR in dB.
std::vector<double> matched_si_sdr(const std::vector<Signal>& outputs, std::span<const double> mixture,
                                   const std::vector<Signal>& refs, double active_db = -25.0,
                                   std::vector<int>* chosen = nullptr);

}  // namespace rfvoice::ssl
