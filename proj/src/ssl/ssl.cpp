#include "rfvoice/ssl/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rfvoice/error.hpp"
#include "rfvoice/log.hpp"
#include "rfvoice/metrics/metrics.hpp"

namespace rfvoice::ssl {

using nn::Graph;

double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw ArgumentError("uniform_index: empty range");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

AudioClip make_mom(const AudioClip& x1, const AudioClip& x2) {
  const AudioClip clips[] = {x1, x2};
  const double gains[] = {1.0, 1.0};
  return audio::mix(clips, gains);
}

Remix remix_selected(const AudioClip& s_a, const AudioClip& s_b, Rng& rng, const RemixWeights& range,
                     std::optional<std::pair<double, double>> forced) {
  Remix r;
  if (forced) {
    r.w_a = forced->first;
    r.w_b = forced->second;
  } else {
    r.w_a = uniform(rng, range.lo, range.hi);
    r.w_b = uniform(rng, range.lo, range.hi);
  }
  const AudioClip clips[] = {s_a, s_b};
  const double gains[] = {r.w_a, r.w_b};
  r.mixture = audio::mix(clips, gains);
  return r;
}

double energy_penalty(std::span<const double> est, double mu, std::span<double> grad) {
  double e = 0.0;
  for (double v : est) e += v * v;
  if (!grad.empty()) {
    for (std::size_t i = 0; i < est.size(); ++i) grad[i] = 2.0 * mu * est[i];
  }
  return mu * e;
}

double pair_loss(std::span<const double> est, std::span<const double> ref, const LossConfig& cfg,
                 std::span<double> grad) {
  if (est.size() != ref.size()) throw ArgumentError("loss: length mismatch");
  if (audio::energy(ref) == 0.0) return energy_penalty(est, cfg.mu, grad);
  if (cfg.kind == LossKind::NegSnr) return metrics::neg_snr_loss(est, ref, cfg.cap_db, grad);
  return metrics::neg_si_sdr_loss(est, ref, cfg.cap_db, grad);
}

namespace {

// Calls fn(pi) for every injective map of n_refs references into n_out
// outputs, in lexicographic order.
void for_each_assignment(int n_out, int n_refs, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> pi(static_cast<std::size_t>(n_refs), -1);
  std::vector<bool> used(static_cast<std::size_t>(n_out), false);
  std::function<void(int)> rec = [&](int j) {
    if (j == n_refs) {
      fn(pi);
      return;
    }
    for (int m = 0; m < n_out; ++m) {
      if (used[static_cast<std::size_t>(m)]) continue;
      used[static_cast<std::size_t>(m)] = true;
      pi[static_cast<std::size_t>(j)] = m;
      rec(j + 1);
      used[static_cast<std::size_t>(m)] = false;
    }
  };
  rec(0);
}

struct TermTable {
  std::vector<std::vector<double>> pair;  // [ref][out]
  std::vector<double> penalty;            // [out]
};

TermTable term_table(const std::vector<Signal>& outputs, const std::vector<Signal>& refs, const LossConfig& cfg) {
  TermTable t;
  t.pair.assign(refs.size(), std::vector<double>(outputs.size()));
  for (std::size_t j = 0; j < refs.size(); ++j) {
    for (std::size_t m = 0; m < outputs.size(); ++m) t.pair[j][m] = pair_loss(outputs[m], refs[j], cfg);
  }
  for (const auto& o : outputs) t.penalty.push_back(energy_penalty(o, cfg.mu));
  return t;
}

double assignment_value(const TermTable& t, const std::vector<int>& pi) {
  double total = 0.0;
  std::vector<bool> used(t.penalty.size(), false);
  for (std::size_t j = 0; j < pi.size(); ++j) {
    total += t.pair[j][static_cast<std::size_t>(pi[j])];
    used[static_cast<std::size_t>(pi[j])] = true;
  }
  for (std::size_t m = 0; m < used.size(); ++m) {
    if (!used[m]) total += t.penalty[m];
  }
  return total;
}

Assignment best_assignment(const TermTable& t) {
  Assignment best;
  best.loss = std::numeric_limits<double>::infinity();
  for_each_assignment(static_cast<int>(t.penalty.size()), static_cast<int>(t.pair.size()), [&](const std::vector<int>& pi) {
    const double v = assignment_value(t, pi);
    if (v < best.loss) {
      best.loss = v;
      best.output_of = pi;
    }
  });
  return best;
}

void check_sep_inputs(std::size_t n_out, std::size_t n_refs) {
  if (n_out < 2) throw ArgumentError("sep_loss: needs at least 2 outputs");
  if (n_refs == 0 || n_refs > n_out) throw ArgumentError("sep_loss: need 1..M references");
}

std::vector<Signal> values_of(const Graph& g, const std::vector<Graph::Var>& vars) {
  std::vector<Signal> out;
  for (auto v : vars) out.push_back(nn::to_vector(g.value(v)));
  return out;
}

}  // namespace

Assignment sep_loss(const std::vector<Signal>& outputs, const std::vector<Signal>& refs, const LossConfig& cfg) {
  check_sep_inputs(outputs.size(), refs.size());
  return best_assignment(term_table(outputs, refs, cfg));
}

Graph::Var sep_loss(Graph& g, const std::vector<Graph::Var>& outputs, const std::vector<Signal>& refs,
                    const LossConfig& cfg, Assignment* chosen) {
  check_sep_inputs(outputs.size(), refs.size());
  const auto best = best_assignment(term_table(values_of(g, outputs), refs, cfg));
  std::vector<Graph::Var> terms;
  std::vector<bool> used(outputs.size(), false);
  for (std::size_t j = 0; j < refs.size(); ++j) {
    const auto m = static_cast<std::size_t>(best.output_of[j]);
    used[m] = true;
    const Signal& ref = refs[j];
    terms.push_back(g.scalar_fn(outputs[m], [&](std::span<const double> e, std::span<double> gr) {
      return pair_loss(e, ref, cfg, gr);
    }));
  }
  for (std::size_t m = 0; m < outputs.size(); ++m) {
    if (used[m]) continue;
    terms.push_back(g.scalar_fn(outputs[m], [&](std::span<const double> e, std::span<double> gr) {
      return energy_penalty(e, cfg.mu, gr);
    }));
  }
  if (chosen) *chosen = best;
  return g.sum(terms);
}

namespace {

void check_den_sizes(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  if (a == 0 || a != b || a != c || a != d) throw ArgumentError("denoise_loss: list sizes differ");
}

}  // namespace

double denoise_loss(const std::vector<Signal>& speech_est, const std::vector<Signal>& noise_est,
                    const std::vector<Signal>& speech_ref, const std::vector<Signal>& noise_ref, const LossConfig& cfg) {
  check_den_sizes(speech_est.size(), noise_est.size(), speech_ref.size(), noise_ref.size());
  double total = 0.0;
  for (std::size_t i = 0; i < speech_est.size(); ++i) {
    total += pair_loss(speech_est[i], speech_ref[i], cfg);
    total += pair_loss(noise_est[i], noise_ref[i], cfg);
  }
  return total;
}

Graph::Var denoise_loss(Graph& g, const std::vector<Graph::Var>& speech_est, const std::vector<Graph::Var>& noise_est,
                        const std::vector<Signal>& speech_ref, const std::vector<Signal>& noise_ref,
                        const LossConfig& cfg) {
  check_den_sizes(speech_est.size(), noise_est.size(), speech_ref.size(), noise_ref.size());
  std::vector<Graph::Var> terms;
  for (std::size_t i = 0; i < speech_est.size(); ++i) {
    const Signal& cr = speech_ref[i];
    const Signal& nr = noise_ref[i];
    terms.push_back(g.scalar_fn(speech_est[i], [&](std::span<const double> e, std::span<double> gr) {
      return pair_loss(e, cr, cfg, gr);
    }));
    terms.push_back(g.scalar_fn(noise_est[i], [&](std::span<const double> e, std::span<double> gr) {
      return pair_loss(e, nr, cfg, gr);
    }));
  }
  return g.sum(terms);
}

std::vector<double> ema_update(std::span<const double> main, std::span<const double> target, double lambda) {
  if (main.size() != target.size()) throw ArgumentError("ema_update: shape mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("ema_update: lambda must lie in [0, 1]");
  std::vector<double> out(main.size());
  for (std::size_t i = 0; i < main.size(); ++i) {
    if (lambda == 1.0) {
      out[i] = main[i];
    } else if (lambda == 0.0) {
      out[i] = target[i];
    } else {
      const double v = lambda * main[i] + (1.0 - lambda) * target[i];
      out[i] = std::clamp(v, std::min(main[i], target[i]), std::max(main[i], target[i]));
    }
  }
  return out;
}

void ema_update(nn::ParamSet& main, const nn::ParamSet& target, double lambda) {
  if (!main.same_shapes(target)) throw ArgumentError("ema_update: parameter shapes differ");
  const auto m = main.flatten();
  const auto t = target.flatten();
  main.unflatten(ema_update(m, t, lambda));
}

bool is_permutation(std::span<const int> p) {
  std::vector<bool> seen(p.size(), false);
  for (int v : p) {
    if (v < 0 || static_cast<std::size_t>(v) >= p.size() || seen[static_cast<std::size_t>(v)]) return false;
    seen[static_cast<std::size_t>(v)] = true;
  }
  return true;
}

bool is_derangement(std::span<const int> p) {
  if (!is_permutation(p)) return false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == static_cast<int>(i)) return false;
  }
  return true;
}

std::vector<int> random_derangement(int n, Rng& rng) {
  if (n < 1) throw ArgumentError("derangement: n must be >= 1");
  std::vector<int> p(static_cast<std::size_t>(n));
  if (n == 1) {
    p[0] = 0;
    return p;
  }
  while (true) {
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = p.size() - 1; i > 0; --i) std::swap(p[i], p[uniform_index(rng, i + 1)]);
    if (is_derangement(p)) return p;
  }
}

std::vector<Signal> denoise_remix_batch(const std::vector<Signal>& speech, const std::vector<Signal>& noise,
                                        std::span<const int> perm) {
  if (speech.size() != noise.size() || perm.size() != speech.size()) {
    throw ArgumentError("denoise_remix_batch: list sizes differ");
  }
  if (!is_permutation(perm)) throw ArgumentError("denoise_remix_batch: not a permutation");
  std::vector<Signal> out;
  for (std::size_t i = 0; i < speech.size(); ++i) {
    const Signal& n = noise[static_cast<std::size_t>(perm[i])];
    if (n.size() != speech[i].size()) throw ArgumentError("denoise_remix_batch: length mismatch");
    Signal s(speech[i].size());
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = speech[i][k] + n[k];
    out.push_back(std::move(s));
  }
  return out;
}

SourceCount count_sources(const std::vector<Signal>& outputs, std::span<const double> mixture, double threshold_db) {
  SourceCount c;
  const double mix_e = audio::energy(mixture);
  if (mix_e == 0.0) return c;
  for (std::size_t m = 0; m < outputs.size(); ++m) {
    if (outputs[m].size() != mixture.size()) throw ArgumentError("count_sources: length mismatch");
    const double e = audio::energy(outputs[m]);
    if (e > 0.0 && 10.0 * std::log10(e / mix_e) > threshold_db) c.active.push_back(static_cast<int>(m));
  }
  c.count = static_cast<int>(c.active.size());
  return c;
}

void TrainLog::add(long step, const std::string& phase, double loss, double metric) {
  rows.push_back({step, phase, loss, metric});
}

void TrainLog::write_csv(const std::filesystem::path& file) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << "step,phase,loss,metric\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.phase << ',' << metrics::format_number(r.loss) << ',' << metrics::format_number(r.metric)
        << '\n';
  }
}

namespace {

std::vector<Signal> infer_signals(const nn::MaskNet& model, const AudioClip& x) {
  std::vector<Signal> out;
  for (auto& c : model.infer(x)) out.push_back(std::move(c.samples));
  return out;
}

const Signal& pick_active(const std::vector<Signal>& outs, std::span<const double> mixture, double active_db,
                          Rng& rng) {
  const auto c = count_sources(outs, mixture, active_db);
  if (c.count == 0) return outs[uniform_index(rng, outs.size())];
  return outs[static_cast<std::size_t>(c.active[uniform_index(rng, c.active.size())])];
}

void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) throw DivergenceError(std::string(what) + ": non-finite loss");
}

}  // namespace

double sep_train_step(MainTargetPair& pair, const std::vector<SepBatchItem>& batch, nn::AdamState& opt, Rng& rng,
                      const SepStepConfig& cfg) {
  if (batch.empty()) throw ArgumentError("sep_train_step: empty batch");
  pair.target.params().zero_grad();
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& item : batch) {
    const auto outs1 = infer_signals(pair.main, item.x1);
    const auto outs2 = infer_signals(pair.main, item.x2);
    const Signal& sa = pick_active(outs1, item.x1.samples, cfg.active_db, rng);
    const Signal& sb = pick_active(outs2, item.x2.samples, cfg.active_db, rng);
    const auto rate = item.x1.sample_rate_hz;
    const auto remix = remix_selected(AudioClip(sa, rate), AudioClip(sb, rate), rng, cfg.weights);
    std::vector<Signal> refs(2);
    refs[0] = sa;
    refs[1] = sb;
    for (auto& v : refs[0]) v *= remix.w_a;
    for (auto& v : refs[1]) v *= remix.w_b;
    refs[0].resize(remix.mixture.size(), 0.0);
    refs[1].resize(remix.mixture.size(), 0.0);

    Graph g(true);
    auto x = g.input(nn::row(remix.mixture.samples));
    auto outs = pair.target.forward(g, x);
    auto loss = sep_loss(g, outs, refs, cfg.loss);
    const double v = g.value(loss)(0, 0);
    check_finite(v, "sep_train_step");
    total += v;
    g.backward(g.scale(loss, scale));
  }
  nn::adam_step(pair.target.params(), opt);
  return total * scale;
}

double shuffle_sum_error(const std::vector<Signal>& speech, const std::vector<Signal>& noise,
                         const std::vector<Signal>& remixed) {
  if (speech.empty()) return 0.0;
  const std::size_t n = speech[0].size();
  double worst = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < speech.size(); ++i) {
      a += remixed[i][k];
      b += speech[i][k] + noise[i][k];
    }
    worst = std::max(worst, std::abs(a - b));
    scale = std::max(scale, std::abs(b));
  }
  return scale > 0.0 ? worst / scale : worst;
}

double denoise_train_step(MainTargetPair& pair, const std::vector<AudioClip>& batch, nn::AdamState& opt, Rng& rng,
                          const DenStepConfig& cfg, double* shuffle_error) {
  if (batch.empty()) throw ArgumentError("denoise_train_step: empty batch");
  std::vector<Signal> speech, noise;
  for (const auto& clip : batch) {
    auto outs = infer_signals(pair.main, clip);
    if (outs.size() != 2) throw ArgumentError("denoiser needs exactly 2 heads");
    speech.push_back(std::move(outs[0]));
    noise.push_back(std::move(outs[1]));
  }
  const auto perm = random_derangement(static_cast<int>(batch.size()), rng);
  const auto remixed = denoise_remix_batch(speech, noise, perm);
  if (shuffle_error) *shuffle_error = shuffle_sum_error(speech, noise, remixed);
  std::vector<Signal> noise_ref;
  for (int p : perm) noise_ref.push_back(noise[static_cast<std::size_t>(p)]);

  pair.target.params().zero_grad();
  Graph g(true);
  std::vector<Graph::Var> c_est, n_est;
  for (const auto& s : remixed) {
    auto outs = pair.target.forward(g, g.input(nn::row(s)));
    c_est.push_back(outs[0]);
    n_est.push_back(outs[1]);
  }
  auto loss = denoise_loss(g, c_est, n_est, speech, noise_ref, cfg.loss);
  const double mean_loss = g.value(loss)(0, 0) / static_cast<double>(batch.size());
  check_finite(mean_loss, "denoise_train_step");
  g.backward(g.scale(loss, 1.0 / static_cast<double>(batch.size())));
  nn::adam_step(pair.target.params(), opt);
  ema_update(pair.main.params(), pair.target.params(), cfg.lambda);
  return mean_loss;
}

AudioClip random_crop(const AudioClip& clip, std::size_t len, Rng& rng) {
  if (len == 0) return clip;
  if (clip.size() <= len) return audio::crop(clip, 0, len);
  const std::size_t start = uniform_index(rng, clip.size() - len + 1);
  return audio::crop(clip, start, len);
}

namespace {

void loss_trend(const std::vector<double>& losses, PhaseResult& r) {
  if (losses.empty()) return;
  const std::size_t k = std::min<std::size_t>(20, losses.size());
  r.first_loss_mean = std::accumulate(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / k;
  r.last_loss_mean = std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(k), losses.end(), 0.0) / k;
}

std::size_t samples_for(double seconds, double rate) {
  if (!(seconds > 0.0)) return 0;
  return static_cast<std::size_t>(std::llround(seconds * rate));
}

}  // namespace

PhaseResult run_sep_phase(MainTargetPair& pair, const std::vector<AudioClip>& pool, const SepPhaseConfig& cfg,
                          std::uint64_t seed, TrainLog& log, const std::string& phase_name, const Validator& validate) {
  PhaseResult res;
  if (cfg.steps <= 0) return res;
  if (pool.size() < 2) throw DataError("sep phase: the pool needs at least 2 mixtures");
  Rng rng(seed);
  nn::AdamState opt(cfg.adam, pair.target.params());
  const std::size_t len = samples_for(cfg.crop_s, pool[0].sample_rate_hz);
  std::vector<double> best_params;
  int since_best = 0;
  if (validate) {
    res.best_metric = validate(pair.target);
    best_params = pair.target.params().flatten();
    log.add(0, phase_name, std::numeric_limits<double>::quiet_NaN(), res.best_metric);
  }
  std::vector<double> losses;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<SepBatchItem> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t i = uniform_index(rng, pool.size());
      std::size_t j = uniform_index(rng, pool.size() - 1);
      if (j >= i) ++j;
      batch.push_back({random_crop(pool[i], len, rng), random_crop(pool[j], len, rng)});
    }
    const double loss = sep_train_step(pair, batch, opt, rng, cfg.step);
    losses.push_back(loss);
    res.steps_run = step;
    double metric = std::numeric_limits<double>::quiet_NaN();
    if (cfg.ema_every > 0 && step % cfg.ema_every == 0) ema_update(pair.main.params(), pair.target.params(), cfg.lambda);
    bool stop = false;
    if (validate && cfg.eval_every > 0 && step % cfg.eval_every == 0) {
      metric = validate(pair.target);
      if (metric > res.best_metric) {
        res.best_metric = metric;
        best_params = pair.target.params().flatten();
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        stop = true;
      }
      log::info(phase_name + " step " + std::to_string(step) + " loss " + std::to_string(loss) + " val " +
                std::to_string(metric));
    }
    log.add(step, phase_name, loss, metric);
    if (stop) break;
  }
  if (validate) pair.target.params().unflatten(best_params);
  loss_trend(losses, res);
  return res;
}

PhaseResult run_den_phase(MainTargetPair& pair, const std::vector<AudioClip>& clips, const DenPhaseConfig& cfg,
                          std::uint64_t seed, TrainLog& log, const std::string& phase_name) {
  PhaseResult res;
  if (cfg.steps <= 0) return res;
  if (clips.size() < static_cast<std::size_t>(cfg.batch)) throw DataError("den phase: fewer clips than the batch size");
  Rng rng(seed);
  nn::AdamState opt(cfg.adam, pair.target.params());
  const std::size_t len = samples_for(cfg.crop_s, clips[0].sample_rate_hz);
  const long steps_per_epoch = std::max<long>(1, static_cast<long>(clips.size()) / cfg.batch);
  std::vector<double> losses;
  for (int step = 1; step <= cfg.steps; ++step) {
    const long epoch = (step - 1) / steps_per_epoch;
    const int halvings = cfg.halve_every_epochs > 0 ? static_cast<int>(epoch / cfg.halve_every_epochs) : 0;
    opt.cfg.lr = cfg.adam.lr * std::pow(0.5, halvings);
    std::vector<std::size_t> idx(clips.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<AudioClip> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t k = b + uniform_index(rng, idx.size() - static_cast<std::size_t>(b));
      std::swap(idx[static_cast<std::size_t>(b)], idx[k]);
      batch.push_back(random_crop(clips[idx[static_cast<std::size_t>(b)]], len, rng));
    }
    double shuffle_err = 0.0;
    const double loss = denoise_train_step(pair, batch, opt, rng, cfg.step, &shuffle_err);
    res.max_shuffle_error = std::max(res.max_shuffle_error, shuffle_err);
    losses.push_back(loss);
    res.steps_run = step;
    log.add(step, phase_name, loss);
    if (step % 100 == 0) log::info(phase_name + " step " + std::to_string(step) + " loss " + std::to_string(loss));
  }
  loss_trend(losses, res);
  return res;
}

PhaseResult pretrain(nn::MaskNet& model, const std::vector<LabeledMixture>& data, const PretrainConfig& cfg,
                     std::uint64_t seed, TrainLog& log, const std::string& phase_name) {
  PhaseResult res;
  if (cfg.epochs <= 0 || data.empty()) return res;
  Rng rng(seed);
  nn::AdamState opt(cfg.adam, model.params());
  std::vector<double> losses;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<LabeledMixture> items;
    for (const auto& d : data) {
      for (int c = 0; c < std::max(1, cfg.crops_per_item); ++c) {
        if (cfg.crop_s <= 0.0) {
          items.push_back(d);
          continue;
        }
        const std::size_t len = samples_for(cfg.crop_s, d.mixture.sample_rate_hz);
        const std::size_t start = d.mixture.size() > len ? uniform_index(rng, d.mixture.size() - len + 1) : 0;
        LabeledMixture crop{audio::crop(d.mixture, start, len), {}};
        for (const auto& r : d.refs) crop.refs.push_back(audio::crop(AudioClip(r, d.mixture.sample_rate_hz), start, len).samples);
        items.push_back(std::move(crop));
      }
    }
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const double scale = 1.0 / static_cast<double>(end - start);
      model.params().zero_grad();
      double total = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& item = items[order[k]];
        Graph g(true);
        auto outs = model.forward(g, g.input(nn::row(item.mixture.samples)));
        Graph::Var loss;
        if (cfg.permutation_invariant) {
          loss = sep_loss(g, outs, item.refs, cfg.loss);
        } else {
          if (item.refs.size() > outs.size()) throw ArgumentError("pretrain: more references than outputs");
          std::vector<Graph::Var> terms;
          for (std::size_t m = 0; m < outs.size(); ++m) {
            if (m < item.refs.size()) {
              const Signal& ref = item.refs[m];
              terms.push_back(g.scalar_fn(outs[m], [&](std::span<const double> e, std::span<double> gr) {
                return pair_loss(e, ref, cfg.loss, gr);
              }));
            } else {
              terms.push_back(g.scalar_fn(outs[m], [&](std::span<const double> e, std::span<double> gr) {
                return energy_penalty(e, cfg.loss.mu, gr);
              }));
            }
          }
          loss = g.sum(terms);
        }
        const double v = g.value(loss)(0, 0);
        check_finite(v, "pretrain");
        total += v;
        g.backward(g.scale(loss, scale));
      }
      nn::adam_step(model.params(), opt);
      ++step;
      losses.push_back(total * scale);
      log.add(step, phase_name, total * scale);
      res.steps_run = static_cast<int>(step);
    }
    log::info(phase_name + " epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(losses.back()));
  }
  loss_trend(losses, res);
  return res;
}

FeedbackResult feedback_cycle(const nn::MaskNet& sep_main, const nn::MaskNet* den_main,
                              const std::vector<AudioClip>& corpus, const FeedbackConfig& cfg, std::uint64_t seed) {
  struct Stream {
    Signal samples;
    int item;
  };
  std::vector<Stream> streams;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto outs = infer_signals(sep_main, corpus[i]);
    const auto c = count_sources(outs, corpus[i].samples, cfg.active_db);
    for (int m : c.active) {
      Signal s = outs[static_cast<std::size_t>(m)];
      if (den_main) s = nn::forward_denoise(*den_main, AudioClip(s, corpus[i].sample_rate_hz)).speech.samples;
      streams.push_back({std::move(s), static_cast<int>(i)});
    }
  }
  if (streams.empty()) throw DataError("feedback: no active source found in any corpus mixture");
  bool multi_item = false;
  for (const auto& s : streams) multi_item = multi_item || s.item != streams[0].item;

  Rng rng(seed);
  FeedbackResult res;
  res.streams = streams.size();
  const double rate = corpus[0].sample_rate_hz;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    const std::size_t a = uniform_index(rng, streams.size());
    std::size_t b = a;
    if (streams.size() > 1) {
      do {
        b = uniform_index(rng, streams.size());
      } while (b == a || (multi_item && streams[b].item == streams[a].item));
    }
    auto r = remix_selected(AudioClip(streams[a].samples, rate), AudioClip(streams[b].samples, rate), rng, cfg.weights);
    res.pool.push_back(std::move(r.mixture));
    res.origin.emplace_back(streams[a].item, streams[b].item);
  }
  return res;
}

std::vector<double> matched_si_sdr(const std::vector<Signal>& outputs, std::span<const double> mixture,
                                   const std::vector<Signal>& refs, double active_db, std::vector<int>* chosen) {
  const auto c = count_sources(outputs, mixture, active_db);
  std::vector<int> cand;
  if (c.count >= static_cast<int>(refs.size())) {
    cand = c.active;
  } else {
    cand.resize(outputs.size());
    std::iota(cand.begin(), cand.end(), 0);
  }
  if (cand.size() < refs.size()) throw ArgumentError("matched_si_sdr: fewer outputs than references");
  std::vector<std::vector<double>> score(refs.size(), std::vector<double>(cand.size()));
  for (std::size_t j = 0; j < refs.size(); ++j) {
    for (std::size_t m = 0; m < cand.size(); ++m) {
      const double v = metrics::si_sdr(outputs[static_cast<std::size_t>(cand[m])], refs[j]);
      score[j][m] = std::clamp(v, -metrics::kAggregateCapDb, metrics::kAggregateCapDb);
    }
  }
  std::vector<double> best_vals;
  std::vector<int> best_out;
  double best = -std::numeric_limits<double>::infinity();
  for_each_assignment(static_cast<int>(cand.size()), static_cast<int>(refs.size()), [&](const std::vector<int>& pi) {
    double total = 0.0;
    for (std::size_t j = 0; j < pi.size(); ++j) total += score[j][static_cast<std::size_t>(pi[j])];
    if (total > best) {
      best = total;
      best_vals.clear();
      best_out.clear();
      for (std::size_t j = 0; j < pi.size(); ++j) {
        best_vals.push_back(score[j][static_cast<std::size_t>(pi[j])]);
        best_out.push_back(cand[static_cast<std::size_t>(pi[j])]);
      }
    }
  });
  if (chosen) *chosen = best_out;
  return best_vals;
}

}  // namespace rfvoice::ssl
