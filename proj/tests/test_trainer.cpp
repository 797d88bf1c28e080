#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <unistd.h>

#include "skna/container.hpp"
#include "skna/error.hpp"
#include "skna/trainer.hpp"

using namespace skna;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidConfig;
}

constexpr int kBins = 6, kFrames = 8;

// Class c lifts frequency rows 2c and 2c+1 by `separation` over unit noise.
Dataset blob_dataset(std::array<int, 3> counts, double separation, std::uint64_t seed,
                     std::vector<std::string> subjects = {"A"}) {
  Dataset ds;
  ds.n_bins = kBins;
  ds.n_frames = kFrames;
  ds.sample_rate_hz = 10000.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (const auto& subject : subjects) {
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
        DatasetEntry e;
        e.subject_id = subject;
        e.label = static_cast<SegmentLabel>(c);
        e.t_start_s = i;
        for (int b = 0; b < kBins; ++b)
          for (int f = 0; f < kFrames; ++f)
            e.values.push_back(static_cast<float>(g(rng) + (b / 2 == c ? separation : 0.0)));
        ds.entries.push_back(std::move(e));
      }
    }
  }
  return ds;
}

nn::ArchSpec toy_arch() {
  nn::ArchSpec a;
  a.input = {1, kBins, kFrames};
  a.layers = {nn::LayerSpec::conv(4), nn::LayerSpec::relu(), nn::LayerSpec::max_pool(),
              nn::LayerSpec::dropout(0.2), nn::LayerSpec::flatten(), nn::LayerSpec::dense(3)};
  return a;
}

TrainConfig toy_config(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.arch = toy_arch();
  cfg.batch_size = 16;
  cfg.lr = 0.01;
  return cfg;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("skna_test_" + std::to_string(::getpid()) + "_" + name);
}

// Nearest-centroid probe over raw values: the linear baseline a CNN should match.
double centroid_accuracy(const Dataset& ds, std::span<const std::size_t> fit, std::span<const std::size_t> eval) {
  const std::size_t per = ds.entries[0].values.size();
  std::vector<std::vector<double>> centroid(3, std::vector<double>(per, 0.0));
  std::array<int, 3> n{};
  for (auto i : fit) {
    const auto c = static_cast<std::size_t>(ds.entries[i].label);
    ++n[c];
    for (std::size_t k = 0; k < per; ++k) centroid[c][k] += ds.entries[i].values[k];
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : centroid[c]) v /= n[c];
  int correct = 0;
  for (auto i : eval) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 3; ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < per; ++k) {
        const double diff = ds.entries[i].values[k] - centroid[static_cast<std::size_t>(c)][k];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == static_cast<int>(ds.entries[i].label);
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

}  // namespace

TEST_CASE("training config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& c) { c.batch_size = 0; }, [](TrainConfig& c) { c.epochs = 0; },
           [](TrainConfig& c) { c.lr = 0.0; }, [](TrainConfig& c) { c.val_fraction = 1.0; },
           [](TrainConfig& c) { c.dropout = 1.0; }, [](TrainConfig& c) { c.k_folds = 1; }}) {
    TrainConfig bad;
    mutate(bad);
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
  }
  Dataset ds;
  ds.n_bins = 51;
  ds.n_frames = 199;
  CHECK(cfg.resolve_arch(ds) == nn::ArchSpec::production(0.2));
}

TEST_CASE("metrics from hand counts") {
  // truth:     0 0 0 1 1 1 1 2 2 2
  // predicted: 0 0 1 1 1 2 1 2 0 2
  const std::vector<int> truth{0, 0, 0, 1, 1, 1, 1, 2, 2, 2};
  const std::vector<int> pred{0, 0, 1, 1, 1, 2, 1, 2, 0, 2};
  const auto m = compute_metrics(truth, pred);
  CHECK(m.total() == 10);
  CHECK(m.confusion[0] == std::array<std::size_t, 3>{2, 1, 0});
  CHECK(m.confusion[1] == std::array<std::size_t, 3>{0, 3, 1});
  CHECK(m.confusion[2] == std::array<std::size_t, 3>{1, 0, 2});
  CHECK(m.accuracy == doctest::Approx(0.7));
  CHECK(m.recall[0] == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall[1] == doctest::Approx(0.75));
  CHECK(m.precision[0] == doctest::Approx(2.0 / 3.0));
  CHECK(m.precision[1] == doctest::Approx(0.75));
  CHECK(m.precision[2] == doctest::Approx(2.0 / 3.0));
  for (const auto& row : m.confusion_normalized)
    CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));

  const auto perfect = compute_metrics(truth, truth);
  CHECK(perfect.accuracy == 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(perfect.confusion_normalized[i][j] == (i == j ? 1.0 : 0.0));

  const std::vector<int> ones(truth.size(), 1);
  CHECK(compute_metrics(truth, ones).accuracy == doctest::Approx(0.4));

  const std::array<Metrics, 2> parts{m, perfect};
  const auto pooled = pool_metrics(parts);
  CHECK(pooled.total() == 20);
  CHECK(pooled.accuracy == doctest::Approx(17.0 / 20.0));

  const std::vector<int> bad{3};
  const std::vector<int> one{0};
  CHECK(code_of([&] { compute_metrics(one, bad); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("predictor evaluation") {
  const auto ds = blob_dataset({10, 20, 5}, 3.0, 1);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto oracle = evaluate([](const DatasetEntry& e) { return static_cast<int>(e.label); }, ds, all);
  CHECK(oracle.accuracy == 1.0);
  const auto constant = evaluate([](const DatasetEntry&) { return 1; }, ds, all);
  CHECK(constant.accuracy == doctest::Approx(20.0 / 35.0));
}

TEST_CASE("single epoch keeps the epoch-1 parameters") {
  auto ds = blob_dataset({20, 20, 20}, 2.0, 3);
  assign_folds(ds, 5, 1);
  const auto model = train_one(ds, 0, toy_config(1));
  REQUIRE(model.history.size() == 1);
  CHECK(model.checkpoint.best_epoch == 1);
  CHECK(model.checkpoint.best_val_loss == model.history[0].val_loss);
  CHECK(model.checkpoint.params.parameter_count() > 0);
  CHECK(model.checkpoint.params != nn::init_model<float>(toy_arch(), 0));
}

TEST_CASE("training is deterministic under the seed") {
  auto ds = blob_dataset({20, 20, 20}, 1.0, 5);
  assign_folds(ds, 5, 1);
  const auto a = train_one(ds, 2, toy_config(4));
  const auto b = train_one(ds, 2, toy_config(4));
  CHECK(a.history == b.history);
  CHECK(a.checkpoint.params == b.checkpoint.params);
  auto other = toy_config(4);
  other.seed = 2;
  CHECK(train_one(ds, 2, other).history != a.history);
}

TEST_CASE("separable blobs are learned") {
  auto ds = blob_dataset({60, 60, 60}, 1.5, 9);
  assign_folds(ds, 5, 1);
  const auto model = train_one(ds, 0, toy_config(20));
  // The linear probe confirms the task is separable on this very split.
  CHECK(centroid_accuracy(ds, model.train_indices, model.val_indices) >= 0.95);
  const double best_val_acc = std::max_element(model.history.begin(), model.history.end(), [](auto& x, auto& y) {
                                return x.val_accuracy < y.val_accuracy;
                              })->val_accuracy;
  CHECK(best_val_acc >= 0.95);
  CHECK(evaluate(model.checkpoint, ds, model.test_indices).accuracy >= 0.9);
}

TEST_CASE("checkpoint holds the minimum validation loss") {
  auto ds = blob_dataset({30, 30, 30}, 0.7, 11);
  assign_folds(ds, 5, 1);
  const auto model = train_one(ds, 1, toy_config(12));
  const auto best = std::min_element(model.history.begin(), model.history.end(),
                                     [](auto& x, auto& y) { return x.val_loss < y.val_loss; });
  CHECK(model.checkpoint.best_val_loss == best->val_loss);
  CHECK(model.checkpoint.best_epoch == best->epoch);
  for (const auto& h : model.history) CHECK(model.checkpoint.best_val_loss <= h.val_loss);
}

TEST_CASE("splits are disjoint and nothing held out reaches training") {
  auto ds = blob_dataset({20, 20, 20}, 1.0, 13, {"A", "B"});
  std::vector<IndexAudit> audits;
  const auto cv = cross_validate(ds, toy_config(2), {}, &audits);
  REQUIRE(audits.size() == 10);
  std::map<std::string, std::vector<std::size_t>> tested;
  for (const auto& a : audits) {
    const std::set<std::size_t> test(a.test.begin(), a.test.end());
    const std::set<std::size_t> val(a.validation.begin(), a.validation.end());
    for (auto i : a.gradient) {
      CHECK(test.count(i) == 0);
      CHECK(val.count(i) == 0);
    }
    for (auto i : a.normalization_fit) {
      CHECK(test.count(i) == 0);
      CHECK(val.count(i) == 0);
    }
    for (auto i : a.validation) CHECK(test.count(i) == 0);
    const auto& subject = ds.entries[a.test.front()].subject_id;
    for (auto i : a.test) {
      CHECK(ds.entries[i].subject_id == subject);
      tested[subject].push_back(i);
    }
    for (auto i : a.gradient) CHECK(ds.entries[i].subject_id == subject);
  }
  // Rotating folds: every entry is tested exactly once.
  for (const auto& [subject, idx] : tested) {
    std::set<std::size_t> unique(idx.begin(), idx.end());
    CHECK(unique.size() == idx.size());
    CHECK(unique.size() == ds.indices_of(subject).size());
  }
  CHECK(cv.pooled.total() == ds.size());
}

TEST_CASE("cross-validation bookkeeping") {
  auto ds = blob_dataset({40, 40, 20}, 2.0, 17);
  std::vector<std::size_t> sizes;
  const auto cv = cross_validate(ds, toy_config(3), [&](const std::string&, const TrainedModel& m, const Metrics&) {
    sizes.push_back(m.test_indices.size());
  });
  CHECK(sizes == std::vector<std::size_t>(5, 20));
  REQUIRE(cv.subjects.size() == 1);
  const auto& s = cv.subjects[0];
  double mean = 0.0;
  for (const auto& f : s.folds) mean += f.metrics.accuracy / 5.0;
  CHECK(s.mean_accuracy == doctest::Approx(mean));
  CHECK(cv.mean_of_subject_means == doctest::Approx(mean));
  CHECK(cv.pooled.total() == 100);
  CHECK(cv.pooled_accuracy == doctest::Approx(cv.pooled.accuracy));
  const auto j = cv.to_json();
  CHECK(j.contains("mean_of_subject_means"));
}

TEST_CASE("class weighting raises minority recall") {
  // 9:1 imbalance against an overlapping minority class; recall is scored on a
  // large fresh draw so the comparison is not dominated by a handful of samples.
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ds = blob_dataset({90, 90, 10}, 0.45, 100 + seed);
    assign_folds(ds, 5, seed);
    const auto fresh = blob_dataset({0, 0, 400}, 0.45, 900 + seed);
    std::vector<std::size_t> all(fresh.size());
    std::iota(all.begin(), all.end(), 0);
    auto cfg = toy_config(15);
    cfg.seed = seed;
    const auto weighted = train_one(ds, 0, cfg);
    cfg.class_weighting = false;
    const auto plain = train_one(ds, 0, cfg);
    const double rw = evaluate(weighted.checkpoint, fresh, all).recall[2];
    const double rp = evaluate(plain.checkpoint, fresh, all).recall[2];
    MESSAGE("seed " << seed << " weighted " << rw << " unweighted " << rp);
    wins += rw > rp;
  }
  // One-sided sign test: 5 of 5 gives p = 1/32.
  CHECK(wins == 5);
}

TEST_CASE("checkpoint file round trip and corruption") {
  auto ds = blob_dataset({20, 20, 20}, 2.0, 19);
  assign_folds(ds, 5, 1);
  const auto model = train_one(ds, 3, toy_config(2));
  const auto path = temp_path("ckpt.sknamodel");
  save_checkpoint(model.checkpoint, path);
  const auto back = load_checkpoint(path);
  CHECK(back.params == model.checkpoint.params);
  CHECK(back.norm_stats == model.checkpoint.norm_stats);
  CHECK(back.best_epoch == model.checkpoint.best_epoch);
  CHECK(back.best_val_loss == model.checkpoint.best_val_loss);
  CHECK(back.subject_id == "A");
  CHECK(back.fold == 3);

  std::vector<std::size_t> test = model.test_indices;
  CHECK(evaluate(back, ds, test).confusion == evaluate(model.checkpoint, ds, test).confusion);

  auto bytes = read_file(path);
  SUBCASE("bit flip") {
    bytes[bytes.size() / 2] ^= 0x01;
    write_file_atomic(path, bytes);
    CHECK(code_of([&] { load_checkpoint(path); }) == ErrorCode::Checksum);
  }
  SUBCASE("version") {
    bytes[8] = 3;
    write_file_atomic(path, bytes);
    CHECK(code_of([&] { load_checkpoint(path); }) == ErrorCode::VersionMismatch);
  }
  SUBCASE("empty") {
    write_file_atomic(path, std::vector<std::uint8_t>{});
    CHECK(code_of([&] { load_checkpoint(path); }) == ErrorCode::Truncated);
  }
  fs::remove(path);
}

TEST_CASE("confusion CSV and history JSON") {
  const std::vector<int> truth{0, 1, 2, 2};
  const std::vector<int> pred{0, 1, 1, 2};
  const auto csv = confusion_csv(compute_metrics(truth, pred), true);
  CHECK(csv.find("StroopFlex") != std::string::npos);
  CHECK(csv.find("0.5") != std::string::npos);
  const std::vector<EpochRecord> h{{1, 0.9, 0.5, 1.0, 0.4}, {2, 0.7, 0.6, 0.8, 0.5}};
  const auto j = history_json(h);
  CHECK(j.size() == 2);
  CHECK(j[1]["val_loss"] == 0.8);
}
