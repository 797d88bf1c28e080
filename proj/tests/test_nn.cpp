#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "skna/error.hpp"
#include "skna/nn.hpp"

using namespace skna;
using namespace skna::nn;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

// Every layer type, small enough for exhaustive finite differences.
ArchSpec small_arch() {
  ArchSpec a;
  a.input = {1, 8, 8};
  a.layers = {LayerSpec::conv(2),    LayerSpec::relu(),    LayerSpec::max_pool(), LayerSpec::dropout(0.3),
              LayerSpec::conv(3),    LayerSpec::relu(),    LayerSpec::max_pool(), LayerSpec::flatten(),
              LayerSpec::dense(4),   LayerSpec::relu(),    LayerSpec::dropout(0.25), LayerSpec::dense(3)};
  return a;
}

// Element-wise layers back to back, and a trailing ReLU.
ArchSpec chained_arch() {
  ArchSpec a;
  a.input = {1, 6, 5};
  a.layers = {LayerSpec::conv(2),       LayerSpec::relu(),    LayerSpec::relu(), LayerSpec::flatten(),
              LayerSpec::dropout(0.5), LayerSpec::dense(3), LayerSpec::relu()};
  return a;
}

template <typename T>
Tensor<T> random_batch(SampleShape s, int batch, std::uint64_t seed) {
  Tensor<T> x({batch, s[0], s[1], s[2]});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : x.data) v = static_cast<T>(g(rng));
  return x;
}

double loss_of(const ModelParams<double>& p, const Tensor<double>& x, const std::vector<int>& y,
               const std::vector<double>& w, std::uint64_t dropout_seed) {
  const auto fr = forward(p, x, Mode::Train, dropout_seed);
  return weighted_ce<double>(fr.logits, y, w).loss;
}

std::vector<std::vector<double>> rows(const Tensor<double>& logits) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(logits.shape[0]));
  for (int b = 0; b < logits.shape[0]; ++b)
    out[static_cast<std::size_t>(b)].assign(logits.sample(b), logits.sample(b) + logits.shape[1]);
  return out;
}

Tensor<double> logits_of(std::vector<std::vector<double>> r) {
  Tensor<double> t({static_cast<int>(r.size()), static_cast<int>(r[0].size()), 1, 1});
  for (std::size_t b = 0; b < r.size(); ++b) std::copy(r[b].begin(), r[b].end(), t.sample(static_cast<int>(b)));
  return t;
}

}  // namespace

TEST_CASE("production architecture shape chain") {
  const auto arch = ArchSpec::production();
  const auto shapes = arch.layer_shapes();
  std::vector<SampleShape> pooled;
  for (std::size_t i = 0; i < arch.layers.size(); ++i)
    if (arch.layers[i].kind == LayerKind::MaxPool) pooled.push_back(shapes[i]);
  REQUIRE(pooled.size() == 3);
  CHECK(pooled[0] == SampleShape{8, 25, 99});
  CHECK(pooled[1] == SampleShape{16, 12, 49});
  CHECK(pooled[2] == SampleShape{32, 6, 24});
  for (std::size_t i = 0; i < arch.layers.size(); ++i)
    if (arch.layers[i].kind == LayerKind::Flatten) CHECK(shapes[i] == SampleShape{4608, 1, 1});
  CHECK(arch.output_width() == 3);
  CHECK(arch.layers.back().kind == LayerKind::Dense);
  CHECK(ArchSpec::from_json(arch.to_json()) == arch);

  const auto params = init_model<float>(arch, 1);
  const auto x = random_batch<float>(arch.input, 32, 2);
  const auto fr = forward(params, x, Mode::Eval);
  CHECK(fr.logits.shape == std::array<int, 4>{32, 3, 1, 1});
  CHECK(std::all_of(fr.logits.data.begin(), fr.logits.data.end(), [](float v) { return std::isfinite(v); }));
  CHECK(forward(params, x, Mode::Eval).logits == fr.logits);

  const auto wrong = random_batch<float>({1, 50, 199}, 2, 2);
  CHECK(code_of([&] { forward(params, wrong, Mode::Eval); }) == ErrorCode::Shape);
}

TEST_CASE("He-normal initialisation") {
  const auto arch = ArchSpec::production();
  CHECK(init_model<float>(arch, 5) == init_model<float>(arch, 5));
  CHECK(init_model<float>(arch, 5) != init_model<float>(arch, 6));

  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    const auto p = init_model<double>(arch, seed);
    for (std::size_t t = 1; t < p.tensors.size(); t += 2)
      for (double b : p.tensors[t].data) REQUIRE(b == 0.0);
    for (double w : p.tensors[0].data) {
      sum += w;
      sq += w * w;
      ++n;
    }
  }
  REQUIRE(n >= 10000);
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(sd / std::sqrt(2.0 / 9.0) - 1.0) < 0.10);
}

TEST_CASE("zero weights give bias logits") {
  auto p = init_model<double>(small_arch(), 3);
  for (std::size_t t = 0; t < p.tensors.size(); t += 2) std::fill(p.tensors[t].data.begin(), p.tensors[t].data.end(), 0.0);
  for (std::size_t t = 1; t < p.tensors.size(); t += 2) std::fill(p.tensors[t].data.begin(), p.tensors[t].data.end(), 0.7);
  p.tensors.back().data = {0.1, -0.2, 0.3};
  const Tensor<double> zero({2, 1, 8, 8});
  const auto logits = forward(p, zero, Mode::Eval).logits;
  for (int b = 0; b < 2; ++b) {
    CHECK(logits.sample(b)[0] == doctest::Approx(0.1));
    CHECK(logits.sample(b)[1] == doctest::Approx(-0.2));
    CHECK(logits.sample(b)[2] == doctest::Approx(0.3));
  }
}

TEST_CASE("weighted cross-entropy") {
  const std::vector<double> unit{1.0, 1.0, 1.0};
  for (int y = 0; y < 3; ++y) {
    const std::vector<int> labels{y};
    CHECK(weighted_ce<double>(logits_of({{0, 0, 0}}), labels, unit).loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  const std::vector<int> zero{0};
  CHECK(weighted_ce<double>(logits_of({{20, 0, 0}}), zero, unit).loss < 1e-6);

  const std::vector<std::vector<double>> l{{1, 0, 0}, {0, 0, 1}};
  const std::vector<int> y{0, 2};
  const std::vector<double> w{1, 1, 2};
  const auto ce = weighted_ce<double>(logits_of(l), y, w);
  CHECK(ce.loss == doctest::Approx(oracle::weighted_ce(l, y, w)).epsilon(1e-12));

  // Equal weights reduce to the plain mean.
  const auto x = rows(logits_of({{0.3, -1.2, 2.0}, {1.0, 1.0, -0.5}, {-2.0, 0.1, 0.4}}));
  const std::vector<int> y3{2, 0, 1};
  const double plain = oracle::weighted_ce(x, y3, unit);
  CHECK(weighted_ce<double>(logits_of(x), y3, unit).loss == doctest::Approx(plain).epsilon(1e-14));
  const std::vector<double> equal{2.5, 2.5, 2.5};
  CHECK(weighted_ce<double>(logits_of(x), y3, equal).loss == doctest::Approx(plain).epsilon(1e-14));

  // Gradient of the loss against central differences on the logits.
  const auto g = weighted_ce<double>(logits_of(x), y3, w).grad;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      auto up = x, dn = x;
      up[b][c] += 1e-6;
      dn[b][c] -= 1e-6;
      const double fd = (oracle::weighted_ce(up, y3, w) - oracle::weighted_ce(dn, y3, w)) / 2e-6;
      CHECK(g.sample(static_cast<int>(b))[c] == doctest::Approx(fd).epsilon(1e-6));
    }

  const std::vector<int> bad{3};
  CHECK(code_of([&] { weighted_ce<double>(logits_of({{0, 0, 0}}), bad, unit); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("analytic gradients match finite differences") {
  const std::vector<double> w{1.0, 0.7, 2.0};
  // Small enough that no ReLU or pooling switch falls inside the stencil,
  // large enough that float64 roundoff stays well below the tolerance.
  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& arch : {small_arch(), chained_arch()}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto p = init_model<double>(arch, 100 + seed);
      // Nonzero biases so that every bias gradient is exercised.
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> g(0.0, 0.1);
      for (std::size_t t = 1; t < p.tensors.size(); t += 2)
        for (auto& b : p.tensors[t].data) b = g(rng);
      const auto x = random_batch<double>(arch.input, 2, 200 + seed);
      const std::vector<int> y{static_cast<int>(seed % 3), static_cast<int>((seed + 1) % 3)};
      const std::uint64_t dseed = 300 + seed;

      const auto fr = forward(p, x, Mode::Train, dseed);
      const auto ce = weighted_ce<double>(fr.logits, y, w);
      const auto grads = backward(p, fr.cache, ce.grad);
      REQUIRE(grads.size() == p.tensors.size());
      for (std::size_t t = 0; t < p.tensors.size(); ++t) {
        REQUIRE(grads[t].shape == p.tensors[t].shape);
        for (std::size_t i = 0; i < p.tensors[t].size(); ++i) {
          auto q = p;
          q.tensors[t].data[i] += h;
          const double up = loss_of(q, x, y, w, dseed);
          q.tensors[t].data[i] -= 2 * h;
          const double dn = loss_of(q, x, y, w, dseed);
          const double fd = (up - dn) / (2 * h);
          const double an = grads[t].data[i];
          const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-7});
          worst = std::max(worst, rel);
          CHECK_MESSAGE(rel < 1e-3, "seed " << seed << " tensor " << t << " index " << i << " analytic " << an
                                            << " numeric " << fd);
        }
      }
    }
  }
  MESSAGE("worst relative error " << worst);
}

TEST_CASE("zero upstream gradient yields zero parameter gradients") {
  const auto p = init_model<double>(small_arch(), 1);
  const auto x = random_batch<double>(small_arch().input, 3, 1);
  const auto fr = forward(p, x, Mode::Train, 4);
  const Tensor<double> zero(fr.logits.shape);
  for (const auto& g : backward(p, fr.cache, zero))
    CHECK(std::all_of(g.data.begin(), g.data.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("dropout: eval is mask-free, train replays its seed, expectation matches eval") {
  ArchSpec probe;
  probe.input = {1, 4, 5};
  probe.layers = {LayerSpec::flatten(), LayerSpec::dropout(0.2), LayerSpec::dense(3)};
  const auto p = init_model<double>(probe, 8);
  const auto x = random_batch<double>(probe.input, 1, 9);
  const auto eval = forward(p, x, Mode::Eval).logits;
  CHECK(forward(p, x, Mode::Eval, 1).logits == forward(p, x, Mode::Eval, 2).logits);
  CHECK(forward(p, x, Mode::Train, 5).logits == forward(p, x, Mode::Train, 5).logits);
  CHECK(forward(p, x, Mode::Train, 5).logits != forward(p, x, Mode::Train, 6).logits);

  std::array<double, 3> mean{};
  const int runs = 20000;
  for (int r = 0; r < runs; ++r) {
    const auto l = forward(p, x, Mode::Train, static_cast<std::uint64_t>(r)).logits;
    for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(c)] += l.data[static_cast<std::size_t>(c)] / runs;
  }
  for (int c = 0; c < 3; ++c)
    CHECK(mean[static_cast<std::size_t>(c)] == doctest::Approx(eval.data[static_cast<std::size_t>(c)]).epsilon(0.02));
}

TEST_CASE("Adam updates") {
  ModelParams<double> p;
  p.tensors = {Tensor<double>({1, 1, 1, 4}, 1.0)};
  auto state = AdamState<double>::zeros_like(p);
  Gradients<double> g{Tensor<double>({1, 1, 1, 4})};
  g[0].data = {0.5, -3.0, 1e-3, 42.0};
  adam_step(p, g, state);
  CHECK(state.step == 1);
  for (std::size_t i = 0; i < 4; ++i) {
    const double gi = g[0].data[i];
    const double expected = 1.0 - 0.001 * gi / (std::abs(gi) + 1e-8);
    CHECK(p.tensors[0].data[i] == doctest::Approx(expected).epsilon(1e-12));
  }

  ModelParams<double> still;
  still.tensors = {Tensor<double>({1, 1, 1, 3}, 0.25)};
  auto s2 = AdamState<double>::zeros_like(still);
  const Gradients<double> none{Tensor<double>({1, 1, 1, 3})};
  for (int i = 0; i < 50; ++i) adam_step(still, none, s2);
  for (double v : still.tensors[0].data) CHECK(v == 0.25);

  // Minimise x^2 from x = 1 and compare with the scalar reference.
  ModelParams<double> q;
  q.tensors = {Tensor<double>({1, 1, 1, 1}, 1.0)};
  auto s3 = AdamState<double>::zeros_like(q);
  AdamConfig cfg;
  cfg.lr = 0.1;
  const auto ref = oracle::scalar_adam(1.0, 0.1, 100, [](double x) { return 2.0 * x; });
  std::vector<double> path{1.0};
  for (int t = 0; t < 100; ++t) {
    Gradients<double> gx{Tensor<double>({1, 1, 1, 1}, 2.0 * q.tensors[0].data[0])};
    adam_step(q, gx, s3, cfg);
    path.push_back(q.tensors[0].data[0]);
  }
  for (std::size_t i = 0; i < path.size(); ++i) CHECK(path[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  CHECK(std::abs(path.back()) < 0.5);
  CHECK(std::abs(path[50]) < std::abs(path[0]));
  CHECK(std::abs(path[100]) < std::abs(path[10]));
}

TEST_CASE("softmax and prediction rules") {
  const std::vector<double> zero{0, 0, 0};
  CHECK(argmax(zero) == 0);
  const std::vector<double> tie{1, 3, 3};
  CHECK(argmax(tie) == 1);
  const std::vector<double> z{2.0, -1.0, 0.5};
  const auto p = softmax(z);
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  for (double c : {-700.0, 3.0, 1e4}) {
    std::vector<double> shifted(z);
    for (auto& v : shifted) v += c;
    const auto ps = softmax(shifted);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(ps[i] - p[i]) < 1e-9);
  }

  auto params = init_model<float>(ArchSpec::production(), 1);
  for (auto& t : params.tensors) std::fill(t.data.begin(), t.data.end(), 0.0f);
  const std::vector<float> spec(51 * 199, 1.0f);
  const auto pred = predict(params, spec);
  CHECK(pred.label == 0);
  CHECK(std::accumulate(pred.probabilities.begin(), pred.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("training trajectory is bitwise reproducible") {
  auto run = [] {
    const auto arch = small_arch();
    auto p = init_model<float>(arch, 77);
    auto state = AdamState<float>::zeros_like(p);
    const auto x = random_batch<float>(arch.input, 6, 3);
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    const std::vector<double> w{1.0, 2.0, 0.5};
    std::vector<float> losses;
    for (std::uint64_t step = 0; step < 15; ++step) {
      const auto fr = forward(p, x, Mode::Train, step);
      const auto ce = weighted_ce<float>(fr.logits, y, w);
      losses.push_back(ce.loss);
      adam_step(p, backward(p, fr.cache, ce.grad), state);
    }
    return losses;
  };
  const auto a = run();
  CHECK(a == run());
  CHECK(a.back() < a.front());
}

TEST_CASE("model file round trip and corruption") {
  const auto p = init_model<float>(ArchSpec::production(0.3), 12);
  const nlohmann::json meta{{"subject", "S03"}, {"fold", 2}};
  const auto bytes = encode_model(p, meta);
  nlohmann::json back_meta;
  CHECK(decode_model(bytes, &back_meta) == p);
  CHECK(back_meta["subject"] == "S03");

  auto flipped = bytes;
  flipped[bytes.size() - 50] ^= 0x04;
  CHECK(code_of([&] { decode_model(flipped); }) == ErrorCode::Checksum);
  auto version = bytes;
  version[8] = 9;
  CHECK(code_of([&] { decode_model(version); }) == ErrorCode::VersionMismatch);
  auto cut = bytes;
  cut.resize(40);
  CHECK(code_of([&] { decode_model(cut); }) == ErrorCode::Truncated);
}
