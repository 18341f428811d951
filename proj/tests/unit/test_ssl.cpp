#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "rfvoice/error.hpp"
#include "rfvoice/metrics/metrics.hpp"
#include "rfvoice/nn/model.hpp"
#include "rfvoice/ssl/ssl.hpp"

using namespace rfvoice;
using namespace rfvoice::ssl;
using Vec = std::vector<double>;

namespace {

nn::NetConfig tiny(int heads) {
  nn::NetConfig c;
  c.front = nn::FrontEnd::Learned;
  c.n_filters = 6;
  c.kernel = 8;
  c.stride = 4;
  c.hidden = 5;
  c.dilations = {1, 2};
  c.heads = heads;
  return c;
}

Vec scaled(const Vec& v, double a) {
  Vec r(v);
  for (auto& x : r) x *= a;
  return r;
}

Vec add(const Vec& a, const Vec& b) {
  Vec r(a);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += b[i];
  return r;
}

// Brute force over every injective reference -> output map.
double oracle_sep_loss(const std::vector<Vec>& outs, const std::vector<Vec>& refs, const LossConfig& cfg) {
  const int m = static_cast<int>(outs.size());
  const int p = static_cast<int>(refs.size());
  std::vector<int> idx(static_cast<std::size_t>(m));
  std::iota(idx.begin(), idx.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int j = 0; j < p; ++j) total += pair_loss(outs[static_cast<std::size_t>(idx[j])], refs[j], cfg);
    std::vector<bool> used(static_cast<std::size_t>(m), false);
    for (int j = 0; j < p; ++j) used[static_cast<std::size_t>(idx[j])] = true;
    for (int k = 0; k < m; ++k) {
      if (!used[static_cast<std::size_t>(k)]) total += cfg.mu * std::inner_product(outs[k].begin(), outs[k].end(), outs[k].begin(), 0.0);
    }
    best = std::min(best, total);
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

std::vector<AudioClip> noisy_corpus(int n, std::size_t len, std::uint64_t seed) {
  std::vector<AudioClip> v;
  for (int i = 0; i < n; ++i) {
    auto a = testutil::sine(200.0 + 70.0 * i, 8000.0, len, 0.4);
    auto b = testutil::gaussian(len, seed + static_cast<std::uint64_t>(i), 0.1);
    v.emplace_back(add(a.samples, b), 8000.0);
  }
  return v;
}

}  // namespace

TEST_CASE("uniform draws stay in range") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform(rng, 0.5, 1.0);
    CHECK(u >= 0.5);
    CHECK(u < 1.0);
    CHECK(uniform_index(rng, 7) < 7u);
  }
}

TEST_CASE("mixture of mixtures and weighted remix") {
  const AudioClip a({1.0, 2.0, 3.0}, 8000.0);
  const AudioClip b({0.5, -1.0}, 8000.0);
  const auto mom = make_mom(a, b);
  CHECK(mom.samples == Vec{1.5, 1.0, 3.0});
  CHECK_THROWS_AS(make_mom(a, AudioClip({1.0}, 16000.0)), ArgumentError);

  Rng rng(1);
  const auto r11 = remix_selected(a, AudioClip({1.0, 1.0, 1.0}, 8000.0), rng, {}, std::pair{1.0, 1.0});
  CHECK(r11.mixture.samples == Vec{2.0, 3.0, 4.0});
  const auto r10 = remix_selected(a, AudioClip({1.0, 1.0, 1.0}, 8000.0), rng, {}, std::pair{1.0, 0.0});
  CHECK(r10.mixture.samples == a.samples);

  Rng r1(9), r2(9);
  const auto x = remix_selected(a, b, r1);
  const auto y = remix_selected(a, b, r2);
  CHECK(x.mixture.samples == y.mixture.samples);
  CHECK(x.w_a >= 0.5);
  CHECK(x.w_a <= 1.0);
  CHECK(x.w_b >= 0.5);
  CHECK(x.w_b <= 1.0);
}

TEST_CASE("sep_loss of exact outputs is twice the cap") {
  const auto s1 = testutil::gaussian(400, 1);
  const auto s2 = testutil::gaussian(400, 2);
  LossConfig cfg;
  CHECK(sep_loss({s1, s2}, {s1, s2}, cfg).loss == doctest::Approx(-50.0));
  CHECK(sep_loss({s2, s1}, {s1, s2}, cfg).loss == doctest::Approx(-50.0));
  const auto a = sep_loss({s2, s1}, {s1, s2}, cfg);
  CHECK(a.output_of == std::vector<int>{1, 0});
}

TEST_CASE("sep_loss equals the brute-force minimum") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> mdist(2, 4);
  for (int trial = 0; trial < 150; ++trial) {
    const int m = mdist(rng);
    const int p = 1 + static_cast<int>(rng() % static_cast<unsigned>(m));
    const std::size_t len = 64;
    std::vector<Vec> refs, outs;
    for (int j = 0; j < p; ++j) refs.push_back(testutil::gaussian(len, rng()));
    if (trial % 5 == 0) refs[0].assign(len, 0.0);
    for (int k = 0; k < m; ++k) {
      Vec o = testutil::gaussian(len, rng(), 0.3);
      if (k < p) o = add(o, refs[static_cast<std::size_t>((k + trial) % p)]);
      outs.push_back(o);
    }
    LossConfig cfg;
    cfg.kind = trial % 2 ? LossKind::NegSnr : LossKind::NegSiSdr;
    const auto got = sep_loss(outs, refs, cfg);
    CHECK(got.loss == doctest::Approx(oracle_sep_loss(outs, refs, cfg)).epsilon(1e-12));
    REQUIRE(got.output_of.size() == static_cast<std::size_t>(p));
    std::set<int> uniq(got.output_of.begin(), got.output_of.end());
    CHECK(uniq.size() == got.output_of.size());

    std::vector<Vec> rev(outs.rbegin(), outs.rend());
    CHECK(sep_loss(rev, refs, cfg).loss == doctest::Approx(got.loss).epsilon(1e-12));
  }
}

TEST_CASE("sep_loss graph value matches the vector form") {
  const auto s1 = testutil::gaussian(64, 3);
  const auto s2 = testutil::gaussian(64, 4);
  const std::vector<Vec> outs{testutil::gaussian(64, 5), add(s1, testutil::gaussian(64, 6, 0.1)), s2};
  LossConfig cfg;
  nn::Graph g(false);
  std::vector<nn::Graph::Var> vars;
  for (const auto& o : outs) vars.push_back(g.input(nn::row(o)));
  Assignment chosen;
  auto v = sep_loss(g, vars, {s1, s2}, cfg, &chosen);
  const auto ref = sep_loss(outs, {s1, s2}, cfg);
  CHECK(g.value(v)(0, 0) == ref.loss);
  CHECK(chosen.output_of == ref.output_of);
}

TEST_CASE("sep_loss input validation") {
  LossConfig cfg;
  const Vec a(8, 1.0);
  CHECK_THROWS_AS(sep_loss({a}, {a}, cfg), ArgumentError);
  CHECK_THROWS_AS(sep_loss({a, a}, {a, a, a}, cfg), ArgumentError);
  CHECK_THROWS_AS(sep_loss({a, a}, {}, cfg), ArgumentError);
}

TEST_CASE("zero reference falls back to the energy penalty") {
  LossConfig cfg;
  cfg.mu = 0.01;
  const Vec est{1.0, 2.0, 2.0};
  Vec grad(3);
  CHECK(pair_loss(est, Vec(3, 0.0), cfg, grad) == doctest::Approx(0.09));
  CHECK(grad[1] == doctest::Approx(0.04));
}

TEST_CASE("denoise_loss examples and direct sum") {
  LossConfig cfg;
  std::vector<Vec> sp, nz;
  for (int i = 0; i < 3; ++i) {
    sp.push_back(testutil::gaussian(100, 10 + i));
    nz.push_back(testutil::gaussian(100, 20 + i));
  }
  CHECK(denoise_loss(sp, nz, sp, nz, cfg) == doctest::Approx(3 * 2 * -25.0));
  CHECK(denoise_loss({sp[0]}, {nz[0]}, {sp[0]}, {nz[0]}, cfg) == doctest::Approx(-50.0));

  std::vector<Vec> se, ne;
  for (int i = 0; i < 3; ++i) {
    se.push_back(add(sp[i], testutil::gaussian(100, 30 + i, 0.5)));
    ne.push_back(add(nz[i], testutil::gaussian(100, 40 + i, 0.5)));
  }
  double direct = 0.0;
  for (int i = 0; i < 3; ++i) {
    direct += metrics::neg_si_sdr_loss(se[i], sp[i], 25.0) + metrics::neg_si_sdr_loss(ne[i], nz[i], 25.0);
  }
  CHECK(denoise_loss(se, ne, sp, nz, cfg) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("EMA laws") {
  const Vec m{1.0, -2.0, 0.25}, t{3.0, 5.0, -1.0};
  CHECK(ema_update(m, t, 1.0) == m);
  CHECK(ema_update(m, t, 0.0) == t);
  CHECK(ema_update(Vec{2.0}, Vec{4.0}, 0.5)[0] == 3.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10.0, 10.0), l(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng), lam = l(rng);
    const double r = ema_update(Vec{a}, Vec{b}, lam)[0];
    CHECK(r >= std::min(a, b) - 1e-12);
    CHECK(r <= std::max(a, b) + 1e-12);
  }
  CHECK_THROWS_AS(ema_update(Vec{1.0}, Vec{1.0, 2.0}, 0.5), ArgumentError);

  nn::MaskNet a(tiny(2), 1), b(tiny(2), 2);
  ema_update(a.params(), b.params(), 0.0);
  CHECK(a.params().flatten() == b.params().flatten());
  nn::MaskNet c(tiny(3), 1);
  CHECK_THROWS_AS(ema_update(a.params(), c.params(), 0.5), ArgumentError);
}

TEST_CASE("random derangements are uniform and fixed-point free") {
  std::map<int, int> expected_count{{2, 1}, {3, 2}, {4, 9}};
  for (int n = 2; n <= 4; ++n) {
    Rng rng(static_cast<std::uint64_t>(n));
    std::map<std::vector<int>, int> freq;
    const int draws = 900 * expected_count[n];
    for (int i = 0; i < draws; ++i) {
      auto d = random_derangement(n, rng);
      REQUIRE(is_derangement(d));
      ++freq[d];
    }
    CHECK(static_cast<int>(freq.size()) == expected_count[n]);
    for (const auto& [perm, c] : freq) {
      CHECK(c > 700);
      CHECK(c < 1100);
    }
  }
  Rng rng(1);
  CHECK(random_derangement(1, rng) == std::vector<int>{0});
  CHECK_THROWS_AS(random_derangement(0, rng), ArgumentError);
  Rng r1(5), r2(5);
  CHECK(random_derangement(6, r1) == random_derangement(6, r2));
}

TEST_CASE("permutation predicates") {
  CHECK(is_permutation(std::vector<int>{2, 0, 1}));
  CHECK_FALSE(is_permutation(std::vector<int>{0, 0, 1}));
  CHECK_FALSE(is_permutation(std::vector<int>{0, 3, 1}));
  CHECK_FALSE(is_permutation(std::vector<int>{-1, 0}));
  CHECK(is_derangement(std::vector<int>{1, 2, 0}));
  CHECK_FALSE(is_derangement(std::vector<int>{1, 0, 2}));
}

TEST_CASE("denoise remix pairs speech with permuted noise") {
  const std::vector<Vec> c{{1.0, 2.0}, {3.0, 4.0}};
  const std::vector<Vec> n{{10.0, 20.0}, {30.0, 40.0}};
  CHECK(denoise_remix_batch(c, n, std::vector<int>{0, 1}) == std::vector<Vec>{{11.0, 22.0}, {33.0, 44.0}});
  CHECK(denoise_remix_batch(c, n, std::vector<int>{1, 0}) == std::vector<Vec>{{31.0, 42.0}, {13.0, 24.0}});
  CHECK_THROWS_AS(denoise_remix_batch(c, n, std::vector<int>{1, 1}), ArgumentError);
  CHECK_THROWS_AS(denoise_remix_batch(c, n, std::vector<int>{0}), ArgumentError);
}

TEST_CASE("shuffling conserves the batch sum exactly") {
  // Dyadic samples with few mantissa bits make every addition exact, so the
  // floating-point sums must agree bit for bit.
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> q(-4096, 4096);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 5;
    std::vector<Vec> c(n, Vec(64)), z(n, Vec(64));
    for (int i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < 64; ++k) {
        c[i][k] = q(rng) / 4096.0;
        z[i][k] = q(rng) / 4096.0;
      }
    }
    Rng r(static_cast<std::uint64_t>(trial));
    const auto p = random_derangement(n, r);
    const auto mixed = denoise_remix_batch(c, z, p);
    for (std::size_t k = 0; k < 64; ++k) {
      double lhs = 0.0, rhs = 0.0;
      for (int i = 0; i < n; ++i) {
        lhs += mixed[i][k];
        rhs += c[i][k] + z[i][k];
      }
      CHECK(lhs == rhs);
    }
    CHECK(shuffle_sum_error(c, z, mixed) == 0.0);
  }
  // General doubles: rounding only.
  std::vector<Vec> c, z;
  for (int i = 0; i < 4; ++i) {
    c.push_back(testutil::gaussian(500, 100 + i));
    z.push_back(testutil::gaussian(500, 200 + i));
  }
  Rng r(3);
  const auto mixed = denoise_remix_batch(c, z, random_derangement(4, r));
  CHECK(shuffle_sum_error(c, z, mixed) < 1e-14);
}

TEST_CASE("source counting") {
  const auto mix = testutil::gaussian(1000, 1);
  const Vec zero(1000, 0.0);
  CHECK(count_sources({zero, zero}, mix).count == 0);
  CHECK(count_sources({mix, zero}, mix).count == 1);
  const auto quiet = scaled(mix, std::pow(10.0, -40.0 / 20.0));
  const auto mid = scaled(mix, std::pow(10.0, -10.0 / 20.0));
  const auto c = count_sources({mid, quiet, mix}, mix);
  CHECK(c.count == 2);
  CHECK(c.active == std::vector<int>{0, 2});
  CHECK(count_sources({mid, quiet}, mix, -50.0).count == 2);
}

TEST_CASE("composed losses have finite-difference gradients") {
  nn::MaskNet sep(tiny(3), 4);
  nn::MaskNet den(tiny(2), 5);
  REQUIRE(sep.params().count() <= 1000);
  const auto x = testutil::gaussian(48, 9, 0.5);
  const auto r1 = testutil::gaussian(48, 10, 0.3);
  const auto r2 = add(x, scaled(r1, -1.0));
  LossConfig cfg;

  auto sep_value = [&](bool grad) {
    nn::Graph g(grad);
    auto outs = sep.forward(g, g.input(nn::row(x)));
    auto l = sep_loss(g, outs, {r1, r2}, cfg);
    if (grad) g.backward(l);
    return g.value(l)(0, 0);
  };
  auto den_value = [&](bool grad) {
    nn::Graph g(grad);
    auto outs = den.forward(g, g.input(nn::row(x)));
    auto l = denoise_loss(g, {outs[0]}, {outs[1]}, {r1}, {r2}, cfg);
    if (grad) g.backward(l);
    return g.value(l)(0, 0);
  };

  auto check_model = [](nn::MaskNet& model, const std::function<double(bool)>& f) {
    model.params().zero_grad();
    f(true);
    const auto analytic = model.params().flatten_grad();
    auto theta = model.params().flatten();
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); i += 3) {
      const double keep = theta[i];
      theta[i] = keep + h;
      model.params().unflatten(theta);
      const double fp = f(false);
      theta[i] = keep - h;
      model.params().unflatten(theta);
      const double fm = f(false);
      theta[i] = keep;
      model.params().unflatten(theta);
      const double fd = (fp - fm) / (2 * h);
      const double rel = std::abs(fd - analytic[i]) / std::max(std::abs(fd) + std::abs(analytic[i]), 1e-2);
      worst = std::max(worst, rel);
    }
    return worst;
  };
  CHECK(check_model(sep, sep_value) <= 1e-4);
  CHECK(check_model(den, den_value) <= 1e-4);
}

namespace {

std::vector<SepBatchItem> sep_batch(std::uint64_t seed) {
  std::vector<SepBatchItem> b;
  for (int i = 0; i < 2; ++i) {
    auto s = testutil::sine(300.0 + 100.0 * i, 8000.0, 200, 0.5);
    auto n = testutil::gaussian(200, seed + static_cast<std::uint64_t>(i), 0.2);
    b.push_back({AudioClip(add(s.samples, n), 8000.0), AudioClip(testutil::gaussian(200, seed + 50 + i, 0.4), 8000.0)});
  }
  return b;
}

}  // namespace

TEST_CASE("separation step is deterministic and freezes the main model") {
  auto run = [](double lr) {
    MainTargetPair pair{nn::MaskNet(tiny(3), 1), nn::MaskNet(tiny(3), 2)};
    nn::AdamConfig ac;
    ac.lr = lr;
    nn::AdamState opt(ac, pair.target.params());
    Rng rng(4);
    SepStepConfig cfg;
    const auto main_before = pair.main.params().flatten();
    const auto target_before = pair.target.params().flatten();
    const double loss = sep_train_step(pair, sep_batch(3), opt, rng, cfg);
    CHECK(std::isfinite(loss));
    CHECK(pair.main.params().flatten() == main_before);
    return std::tuple{loss, pair.target.params().flatten(), target_before};
  };
  const auto [l1, t1, b1] = run(1e-3);
  const auto [l2, t2, b2] = run(1e-3);
  CHECK(l1 == l2);
  CHECK(t1 == t2);
  CHECK(t1 != b1);
  const auto [l0, t0, b0] = run(0.0);
  CHECK(t0 == b0);
  CHECK(l0 == l1);

  MainTargetPair pair{nn::MaskNet(tiny(3), 1), nn::MaskNet(tiny(3), 2)};
  nn::AdamState opt({}, pair.target.params());
  Rng rng(1);
  CHECK_THROWS_AS(sep_train_step(pair, {}, opt, rng, {}), ArgumentError);
}

TEST_CASE("denoising step is deterministic and applies the EMA") {
  auto batch = noisy_corpus(3, 160, 7);
  auto run = [&](double lr, double lambda, double* shuffle) {
    MainTargetPair pair{nn::MaskNet(tiny(2), 1), nn::MaskNet(tiny(2), 2)};
    nn::AdamConfig ac;
    ac.lr = lr;
    nn::AdamState opt(ac, pair.target.params());
    Rng rng(8);
    DenStepConfig cfg;
    cfg.lambda = lambda;
    const auto main_before = pair.main.params().flatten();
    const double loss = denoise_train_step(pair, batch, opt, rng, cfg, shuffle);
    CHECK(std::isfinite(loss));
    return std::tuple{loss, pair.main.params().flatten(), pair.target.params().flatten(), main_before};
  };
  double err = 1.0;
  const auto [l1, m1, t1, mb1] = run(1e-3, 0.5, &err);
  CHECK(err < 1e-12);
  const auto [l2, m2, t2, mb2] = run(1e-3, 0.5, nullptr);
  CHECK(l1 == l2);
  CHECK(m1 == m2);
  CHECK(t1 == t2);
  for (std::size_t i = 0; i < m1.size(); ++i) CHECK(m1[i] == doctest::Approx(0.5 * mb1[i] + 0.5 * t1[i]));
  const auto [l3, m3, t3, mb3] = run(1e-3, 1.0, nullptr);
  CHECK(m3 == mb3);
  const auto [l4, m4, t4, mb4] = run(0.0, 0.0, nullptr);
  CHECK(m4 == t4);
}

TEST_CASE("training lowers the loss on a tiny problem") {
  const auto pool = noisy_corpus(6, 800, 21);
  MainTargetPair pair{nn::MaskNet(tiny(2), 3), nn::MaskNet(tiny(2), 3)};
  DenPhaseConfig cfg;
  cfg.steps = 160;
  cfg.batch = 3;
  cfg.crop_s = 0.05;
  cfg.adam.lr = 3e-3;
  cfg.step.lambda = 0.9;
  TrainLog log;
  const auto res = run_den_phase(pair, pool, cfg, 5, log, "den");
  CHECK(res.steps_run == 160);
  CHECK(res.last_loss_mean < res.first_loss_mean);
  CHECK(res.max_shuffle_error < 1e-12);
  CHECK(log.rows.size() >= 160u);
}

TEST_CASE("pretraining with zero epochs leaves the model unchanged") {
  nn::MaskNet m(tiny(2), 3);
  const auto before = m.params().flatten();
  const auto clips = noisy_corpus(2, 200, 1);
  std::vector<LabeledMixture> data;
  for (const auto& c : clips) data.push_back({c, {c.samples, Vec(c.size(), 0.0)}});
  PretrainConfig cfg;
  cfg.epochs = 0;
  TrainLog log;
  const auto r = pretrain(m, data, cfg, 1, log, "pre");
  CHECK(r.steps_run == 0);
  CHECK(m.params().flatten() == before);

  cfg.epochs = 1;
  cfg.batch = 2;
  nn::MaskNet a(tiny(2), 3), b(tiny(2), 3);
  pretrain(a, data, cfg, 9, log, "pre");
  pretrain(b, data, cfg, 9, log, "pre");
  CHECK(a.params().flatten() == b.params().flatten());
  CHECK(a.params().flatten() != before);
}

TEST_CASE("feedback with an identity denoiser is a plain cross remix") {
  const auto corpus = noisy_corpus(4, 300, 2);
  const nn::MaskNet sep(tiny(2), 6);
  FeedbackConfig cfg;
  cfg.active_db = -60.0;
  const auto res = feedback_cycle(sep, nullptr, corpus, cfg, 13);
  REQUIRE(res.pool.size() == corpus.size());
  REQUIRE(res.origin.size() == corpus.size());

  std::vector<Vec> streams;
  std::vector<int> item;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const auto& o : sep.infer(corpus[i])) {
      streams.push_back(o.samples);
      item.push_back(static_cast<int>(i));
    }
  }
  CHECK(res.streams == streams.size());
  for (std::size_t k = 0; k < res.pool.size(); ++k) {
    CHECK(res.origin[k].first != res.origin[k].second);
    // Some pair of streams from the two origins with weights in [0.5, 1] reproduces the entry.
    bool found = false;
    for (std::size_t a = 0; a < streams.size() && !found; ++a) {
      if (item[a] != res.origin[k].first) continue;
      for (std::size_t b = 0; b < streams.size() && !found; ++b) {
        if (item[b] != res.origin[k].second) continue;
        Eigen::MatrixXd A(300, 2);
        Eigen::VectorXd y(300);
        for (int t = 0; t < 300; ++t) {
          A(t, 0) = streams[a][t];
          A(t, 1) = streams[b][t];
          y(t) = res.pool[k].samples[t];
        }
        const Eigen::VectorXd w = A.colPivHouseholderQr().solve(y);
        if ((A * w - y).norm() <= 1e-9 * y.norm() && w(0) >= 0.5 - 1e-9 && w(0) <= 1.0 + 1e-9 && w(1) >= 0.5 - 1e-9 &&
            w(1) <= 1.0 + 1e-9) {
          found = true;
        }
      }
    }
    CHECK(found);
  }
  const auto again = feedback_cycle(sep, nullptr, corpus, cfg, 13);
  for (std::size_t k = 0; k < res.pool.size(); ++k) CHECK(again.pool[k].samples == res.pool[k].samples);

  const std::vector<AudioClip> silent(2, AudioClip(Vec(300, 0.0), 8000.0));
  CHECK_THROWS_AS(feedback_cycle(sep, nullptr, silent, FeedbackConfig{}, 1), DataError);
}

TEST_CASE("matched SI-SDR picks the best assignment") {
  const auto s1 = testutil::gaussian(500, 1);
  const auto s2 = testutil::gaussian(500, 2);
  const auto mix = add(s1, s2);
  const auto o1 = add(s1, testutil::gaussian(500, 3, 0.1));
  const auto o2 = add(s2, testutil::gaussian(500, 4, 0.1));
  std::vector<int> chosen;
  const auto v = matched_si_sdr({o2, scaled(mix, 1e-4), o1}, mix, {s1, s2}, -25.0, &chosen);
  CHECK(chosen == std::vector<int>{2, 0});
  CHECK(v[0] == doctest::Approx(testutil::direct_si_sdr(o1, s1)).epsilon(1e-9));
  CHECK(v[1] == doctest::Approx(testutil::direct_si_sdr(o2, s2)).epsilon(1e-9));
  const auto exact = matched_si_sdr({s2, s1}, mix, {s1, s2});
  CHECK(exact[0] == metrics::kAggregateCapDb);
}

TEST_CASE("random crops") {
  Rng rng(3);
  const AudioClip c(testutil::gaussian(100, 4), 16000.0);
  CHECK(random_crop(c, 0, rng).samples == c.samples);
  const auto part = random_crop(c, 30, rng);
  REQUIRE(part.size() == 30u);
  const auto it = std::search(c.samples.begin(), c.samples.end(), part.samples.begin(), part.samples.end());
  CHECK(it != c.samples.end());
  const auto padded = random_crop(c, 120, rng);
  REQUIRE(padded.size() == 120u);
  CHECK(std::equal(c.samples.begin(), c.samples.end(), padded.samples.begin()));
  CHECK(padded.samples.back() == 0.0);
}
