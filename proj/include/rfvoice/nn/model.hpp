#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfvoice/audio/clip.hpp"
#include "rfvoice/nn/graph.hpp"

namespace rfvoice::nn {

enum class FrontEnd { Learned, Stft };

struct NetConfig {
  FrontEnd front = FrontEnd::Learned;
  int n_filters = 64;  // learned basis size
  int kernel = 32;     // basis length (samples)
  int stride = 16;
  int hidden = 64;
  std::vector<int> dilations{1, 4, 16};
  int heads = 4;
  // STFT front end
  int fft_size = 512;
  int hop = 128;

  void validate() const;  // throws ArgumentError
  // Compact topology string stored in checkpoints.
  std::string descriptor() const;
  int frame_len() const { return front == FrontEnd::Learned ? kernel : fft_size; }
  int frame_hop() const { return front == FrontEnd::Learned ? stride : hop; }
  int feature_dim() const { return front == FrontEnd::Learned ? n_filters : fft_size / 2 + 1; }
};

NetConfig sep_config(int heads = 4);
NetConfig den_config();

// Masking network: analysis basis, gLN + dilated conv residual blocks,
// sigmoid mask heads, shared synthesis basis, overlap-add and the
// mixture-consistency projection.
class MaskNet {
 public:
  MaskNet() = default;
  MaskNet(const NetConfig& cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // x is 1 x T; returns `heads` consistent 1 x T outputs.
  std::vector<Graph::Var> forward(Graph& g, Graph::Var x);
  // Forward without gradient recording. Throws DivergenceError on non-finite outputs.
  std::vector<audio::AudioClip> infer(const audio::AudioClip& x) const;

 private:
  NetConfig cfg_;
  ParamSet params_;
  Mat stft_analysis_;   // (2F) x n_fft, windowed real DFT rows
  Mat stft_synthesis_;  // n_fft x (2F), windowed inverse
};

using SepModel = MaskNet;
using DenModel = MaskNet;

// out'_m = out_m + (mixture - sum out) / M.
std::vector<std::vector<double>> mixture_consistency_projection(const std::vector<std::vector<double>>& outputs,
                                                                std::span<const double> mixture);
std::vector<Graph::Var> mixture_consistency_projection(Graph& g, const std::vector<Graph::Var>& outputs,
                                                       Graph::Var mixture);

struct SeparationResult {
  std::vector<audio::AudioClip> outputs;
};
SeparationResult forward_separate(const SepModel& model, const audio::AudioClip& mixture);

struct DenoiseResult {
  audio::AudioClip speech;
  audio::AudioClip noise;
};
DenoiseResult forward_denoise(const DenModel& model, const audio::AudioClip& clip);

// Largest relative consistency error |sum out - x| / |x| seen by any forward
// pass since the last reset (process-wide, thread-safe).
double max_consistency_error();
void reset_consistency_error();

Mat row(std::span<const double> x);
std::vector<double> to_vector(const Mat& row);

}  // namespace rfvoice::nn
