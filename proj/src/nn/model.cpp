#include "rfvoice/nn/model.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

#include "rfvoice/error.hpp"

namespace rfvoice::nn {
namespace {

std::mutex g_consistency_mutex;
double g_consistency_max = 0.0;

void record_consistency(double err) {
  std::lock_guard lock(g_consistency_mutex);
  g_consistency_max = std::max(g_consistency_max, err);
}

Mat uniform_init(int rows, int cols, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  }
  return m;
}

}  // namespace

double max_consistency_error() {
  std::lock_guard lock(g_consistency_mutex);
  return g_consistency_max;
}

void reset_consistency_error() {
  std::lock_guard lock(g_consistency_mutex);
  g_consistency_max = 0.0;
}

Mat row(std::span<const double> x) {
  Mat m(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), m.data());
  return m;
}

std::vector<double> to_vector(const Mat& r) { return {r.data(), r.data() + r.size()}; }

void NetConfig::validate() const {
  if (heads < 2) throw ArgumentError("net: heads must be >= 2");
  if (hidden < 1) throw ArgumentError("net: hidden width must be >= 1");
  for (int d : dilations) {
    if (d < 1) throw ArgumentError("net: dilations must be >= 1");
  }
  if (front == FrontEnd::Learned) {
    if (n_filters < 1 || kernel < 1 || stride < 1 || stride > kernel) {
      throw ArgumentError("net: need n_filters, kernel >= 1 and 1 <= stride <= kernel");
    }
  } else {
    if (fft_size < 4 || fft_size % 2 != 0 || hop < 1 || hop > fft_size) {
      throw ArgumentError("net: need an even fft_size >= 4 and 1 <= hop <= fft_size");
    }
  }
}

std::string NetConfig::descriptor() const {
  std::ostringstream s;
  if (front == FrontEnd::Learned) {
    s << "learned;N=" << n_filters << ";L=" << kernel << ";S=" << stride;
  } else {
    s << "stft;nfft=" << fft_size << ";hop=" << hop;
  }
  s << ";H=" << hidden << ";dil=";
  for (std::size_t i = 0; i < dilations.size(); ++i) s << (i ? "," : "") << dilations[i];
  s << ";M=" << heads;
  return s.str();
}

NetConfig sep_config(int heads) {
  NetConfig c;
  c.heads = heads;
  return c;
}

NetConfig den_config() {
  NetConfig c;
  c.heads = 2;
  return c;
}

MaskNet::MaskNet(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int f = cfg_.feature_dim();
  const int h = cfg_.hidden;
  if (cfg_.front == FrontEnd::Learned) {
    params_.add("enc", uniform_init(cfg_.n_filters, cfg_.kernel, cfg_.kernel, rng));
  }
  params_.add("in.w", uniform_init(h, f, f, rng));
  params_.add("in.gain", Mat::Ones(h, 1));
  for (std::size_t b = 0; b < cfg_.dilations.size(); ++b) {
    params_.add("block" + std::to_string(b) + ".w", uniform_init(h, 3 * h, 3 * h, rng));
    params_.add("block" + std::to_string(b) + ".gain", Mat::Ones(h, 1));
  }
  params_.add("mask.w", uniform_init(cfg_.heads * f, h, h, rng));
  params_.add("mask.b", Mat::Zero(cfg_.heads * f, 1));
  if (cfg_.front == FrontEnd::Learned) {
    params_.add("dec", uniform_init(cfg_.kernel, cfg_.n_filters, cfg_.n_filters, rng));
  } else {
    const int n = cfg_.fft_size;
    std::vector<double> w(static_cast<std::size_t>(n));
    double wsq = 0.0;
    for (int i = 0; i < n; ++i) {
      w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
      wsq += w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
    }
    const double overlap_gain = wsq / cfg_.hop;
    stft_analysis_ = Mat::Zero(2 * f, n);
    stft_synthesis_ = Mat::Zero(n, 2 * f);
    for (int k = 0; k < f; ++k) {
      const double c = (k == 0 || 2 * k == n) ? 1.0 : 2.0;
      for (int i = 0; i < n; ++i) {
        const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) * i / n;
        const double wi = w[static_cast<std::size_t>(i)];
        stft_analysis_(k, i) = wi * std::cos(ang);
        stft_analysis_(f + k, i) = -wi * std::sin(ang);
        stft_synthesis_(i, k) = wi * c * std::cos(ang) / (n * overlap_gain);
        stft_synthesis_(i, f + k) = -wi * c * std::sin(ang) / (n * overlap_gain);
      }
    }
  }
}

std::vector<Graph::Var> MaskNet::forward(Graph& g, Graph::Var x) {
  const auto t_len = static_cast<int>(g.value(x).cols());
  const int len = cfg_.frame_len();
  const int hop = cfg_.frame_hop();
  const int f = cfg_.feature_dim();
  const int count = t_len <= len ? 1 : (t_len - len + hop - 1) / hop + 1;
  std::size_t pi = 0;
  auto next = [&]() { return g.parameter(params_[pi++]); };

  auto frames = g.frame(x, len, hop, count);
  Graph::Var feat, re, im;
  if (cfg_.front == FrontEnd::Learned) {
    feat = g.matmul(next(), frames);
  } else {
    auto coef = g.matmul(g.constant_ref(stft_analysis_), frames);
    re = g.rows(coef, 0, f);
    im = g.rows(coef, f, f);
    feat = g.sqrt_eps(g.add(g.mul(re, re), g.mul(im, im)), 1e-8);
  }
  auto w_in = next();
  auto gain_in = next();
  auto h = g.gln(g.matmul(w_in, feat), gain_in);
  for (int d : cfg_.dilations) {
    auto w = next();
    auto gain = next();
    auto z = g.matmul(w, g.shift_stack(h, d));
    h = g.add(h, g.silu(g.gln(z, gain)));
  }
  auto mask_w = next();
  auto mask_b = next();
  auto masks = g.sigmoid(g.add_col_bias(g.matmul(mask_w, h), mask_b));
  Graph::Var dec;
  if (cfg_.front == FrontEnd::Learned) dec = next();

  std::vector<Graph::Var> outs;
  for (int m = 0; m < cfg_.heads; ++m) {
    auto mk = g.rows(masks, m * f, f);
    Graph::Var out_frames;
    if (cfg_.front == FrontEnd::Learned) {
      out_frames = g.matmul(dec, g.mul(mk, feat));
    } else {
      out_frames = g.matmul(g.constant_ref(stft_synthesis_), g.vstack(g.mul(mk, re), g.mul(mk, im)));
    }
    outs.push_back(g.overlap_add(out_frames, hop, t_len));
  }
  return mixture_consistency_projection(g, outs, x);
}

std::vector<audio::AudioClip> MaskNet::infer(const audio::AudioClip& x) const {
  Graph g(false);
  auto in = g.input(row(x.samples));
  // A non-recording graph never writes to the parameters.
  auto outs = const_cast<MaskNet*>(this)->forward(g, in);
  std::vector<audio::AudioClip> res;
  for (auto o : outs) {
    const Mat& v = g.value(o);
    if (!v.allFinite()) throw DivergenceError("non-finite model output");
    res.emplace_back(to_vector(v), x.sample_rate_hz);
  }
  return res;
}

std::vector<std::vector<double>> mixture_consistency_projection(const std::vector<std::vector<double>>& outputs,
                                                                std::span<const double> mixture) {
  if (outputs.empty()) throw ArgumentError("consistency: no outputs");
  const std::size_t n = mixture.size();
  for (const auto& o : outputs) {
    if (o.size() != n) throw ArgumentError("consistency: length mismatch");
  }
  const double m = static_cast<double>(outputs.size());
  std::vector<double> resid(mixture.begin(), mixture.end());
  std::vector<double> total(n, 0.0);
  for (const auto& o : outputs) {
    for (std::size_t i = 0; i < n; ++i) total[i] += o[i];
  }
  for (std::size_t i = 0; i < n; ++i) resid[i] = (resid[i] - total[i]) / m;
  auto out = outputs;
  for (auto& o : out) {
    for (std::size_t i = 0; i < n; ++i) o[i] += resid[i];
  }
  return out;
}

std::vector<Graph::Var> mixture_consistency_projection(Graph& g, const std::vector<Graph::Var>& outputs,
                                                       Graph::Var mixture) {
  if (outputs.empty()) throw ArgumentError("consistency: no outputs");
  auto total = g.sum(outputs);
  auto resid = g.scale(g.sub(mixture, total), 1.0 / static_cast<double>(outputs.size()));
  std::vector<Graph::Var> out;
  for (auto o : outputs) out.push_back(g.add(o, resid));

  Mat check = Mat::Zero(1, g.value(mixture).cols());
  for (auto o : out) check += g.value(o);
  const double ref = g.value(mixture).norm();
  if (ref > 0.0) record_consistency((check - g.value(mixture)).norm() / ref);
  return out;
}

SeparationResult forward_separate(const SepModel& model, const audio::AudioClip& mixture) {
  return {model.infer(mixture)};
}

DenoiseResult forward_denoise(const DenModel& model, const audio::AudioClip& clip) {
  if (model.config().heads != 2) throw ArgumentError("denoiser needs exactly 2 heads");
  auto outs = model.infer(clip);
  return {std::move(outs[0]), std::move(outs[1])};
}

}  // namespace rfvoice::nn
