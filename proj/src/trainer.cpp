#include "skna/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "skna/container.hpp"
#include "skna/error.hpp"
#include "skna/seed.hpp"

namespace skna {

namespace {

enum SeedStream : std::uint64_t { kValSplit = 1, kInit = 2, kShuffle = 3, kDropout = 4 };

std::uint64_t stream_seed(std::uint64_t job_seed, SeedStream s, std::uint64_t step = 0) {
  return mix64(job_seed ^ mix64(static_cast<std::uint64_t>(s) * 0x1000003ull + step));
}

nn::Tensor<float> make_batch(const Dataset& ds, std::span<const std::size_t> idx,
                             const std::map<std::string, NormStats>& stats) {
  nn::Tensor<float> batch({static_cast<int>(idx.size()), 1, ds.n_bins, ds.n_frames});
  const std::size_t per = batch.sample_size();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& e = ds.entries[idx[b]];
    if (e.values.size() != per) throw Error(ErrorCode::Shape, "entry has wrong spectrogram size");
    const auto it = stats.find(e.subject_id);
    if (it == stats.end()) throw Error(ErrorCode::NotFound, "no normalization for " + e.subject_id);
    const double mean = it->second.mean, sd = it->second.std;
    float* dst = batch.sample(static_cast<int>(b));
    for (std::size_t i = 0; i < per; ++i) dst[i] = static_cast<float>((e.values[i] - mean) / sd);
  }
  return batch;
}

std::vector<int> labels_of(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (auto i : idx) {
    const int c = static_cast<int>(ds.entries[i].label);
    if (c >= kClassCount) throw Error(ErrorCode::InvalidConfig, "non-classifier label in training data");
    out.push_back(c);
  }
  return out;
}

int argmax_row(const nn::Tensor<float>& logits, int row) {
  const int k = logits.shape[1];
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (logits.data[static_cast<std::size_t>(row * k + j)] > logits.data[static_cast<std::size_t>(row * k + best)]) best = j;
  }
  return best;
}

struct EvalOutcome {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predicted;
};

EvalOutcome run_eval(const nn::ModelParams<float>& params, const Dataset& ds,
                     std::span<const std::size_t> idx, const std::map<std::string, NormStats>& stats,
                     std::span<const double> weights, int batch_size) {
  EvalOutcome out;
  double weighted_loss = 0.0, weight_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto chunk = idx.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(batch_size), idx.size() - start));
    const auto batch = make_batch(ds, chunk, stats);
    const auto labels = labels_of(ds, chunk);
    const auto fwd = nn::forward(params, batch, nn::Mode::Eval);
    if (!weights.empty()) {
      const auto loss = nn::weighted_ce(fwd.logits, labels, weights);
      double w = 0.0;
      for (int y : labels) w += weights[static_cast<std::size_t>(y)];
      weighted_loss += static_cast<double>(loss.loss) * w;
      weight_sum += w;
    }
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const int pred = argmax_row(fwd.logits, static_cast<int>(b));
      out.predicted.push_back(pred);
      if (pred == labels[b]) ++correct;
    }
  }
  out.loss = weight_sum > 0.0 ? weighted_loss / weight_sum : 0.0;
  out.accuracy = idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
  return out;
}


}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (batch_size < 1 || epochs < 1 || k_folds < 2) fail("batch size, epochs and folds must be positive");
  if (!(lr > 0.0)) fail("learning rate must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail("validation fraction must lie in (0, 1)");
}

nn::ArchSpec TrainConfig::resolve_arch(const Dataset& dataset) const {
  if (!arch.layers.empty()) return arch;
  return nn::ArchSpec::production(dropout, {1, dataset.n_bins, dataset.n_frames});
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"lr", lr},
          {"epochs", epochs},         {"dropout", dropout},
          {"k_folds", k_folds},       {"val_fraction", val_fraction},
          {"seed", seed},             {"class_weighting", class_weighting},
          {"checkpoint_metric", "val_loss"}};
}

std::size_t Metrics::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return n;
}

namespace {

Metrics finish_metrics(Metrics m) {
  const auto n = m.total();
  std::size_t diag = 0;
  for (int i = 0; i < kClassCount; ++i) diag += m.confusion[i][i];
  m.accuracy = n == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(n);
  for (int i = 0; i < kClassCount; ++i) {
    const auto row = std::accumulate(m.confusion[i].begin(), m.confusion[i].end(), std::size_t{0});
    std::size_t col = 0;
    for (int j = 0; j < kClassCount; ++j) col += m.confusion[j][i];
    for (int j = 0; j < kClassCount; ++j) {
      m.confusion_normalized[i][j] = row == 0 ? 0.0 : static_cast<double>(m.confusion[i][j]) / static_cast<double>(row);
    }
    m.recall[i] = row == 0 ? 0.0 : static_cast<double>(m.confusion[i][i]) / static_cast<double>(row);
    m.precision[i] = col == 0 ? 0.0 : static_cast<double>(m.confusion[i][i]) / static_cast<double>(col);
  }
  return m;
}

}  // namespace

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw Error(ErrorCode::Shape, "truth / prediction length mismatch");
  Metrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= kClassCount || predicted[i] < 0 || predicted[i] >= kClassCount) {
      throw Error(ErrorCode::InvalidConfig, "class index out of range");
    }
    ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return finish_metrics(m);
}

Metrics pool_metrics(std::span<const Metrics> parts) {
  Metrics m;
  for (const auto& p : parts) {
    for (int i = 0; i < kClassCount; ++i) {
      for (int j = 0; j < kClassCount; ++j) m.confusion[i][j] += p.confusion[i][j];
    }
  }
  return finish_metrics(m);
}

nlohmann::json Metrics::to_json() const {
  return {{"accuracy", accuracy},
          {"confusion", confusion},
          {"confusion_normalized", confusion_normalized},
          {"precision", precision},
          {"recall", recall},
          {"classes", {"Baseline", "Stroop", "StroopFlex"}}};
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["subject_id"] = checkpoint.subject_id;
  meta["fold"] = checkpoint.fold;
  meta["best_epoch"] = checkpoint.best_epoch;
  meta["best_val_loss"] = checkpoint.best_val_loss;
  auto& stats = meta["norm_stats"] = nlohmann::json::object();
  for (const auto& [subject, s] : checkpoint.norm_stats) stats[subject] = {{"mean", s.mean}, {"std", s.std}};
  write_file_atomic(path, nn::encode_model(checkpoint.params, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json meta;
  Checkpoint c;
  c.params = nn::decode_model(read_file(path), &meta);
  try {
    c.subject_id = meta.at("subject_id").get<std::string>();
    c.fold = meta.at("fold").get<int>();
    c.best_epoch = meta.at("best_epoch").get<int>();
    c.best_val_loss = meta.at("best_val_loss").get<double>();
    for (const auto& [subject, s] : meta.at("norm_stats").items()) {
      c.norm_stats[subject] = {s.at("mean").get<double>(), s.at("std").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Truncated, std::string("malformed checkpoint metadata: ") + e.what());
  }
  return c;
}

TrainedModel train_one(const Dataset& dataset, int fold, const TrainConfig& cfg, IndexAudit* audit) {
  cfg.validate();
  const auto subjects = dataset.subjects();
  if (subjects.empty()) throw Error(ErrorCode::Length, "empty dataset");
  const std::string subject = subjects.size() == 1 ? subjects.front() : std::string("pooled");
  const std::uint64_t job_seed = derive_seed(cfg.seed, subject, static_cast<std::uint64_t>(fold));

  std::vector<std::size_t> test, rest;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int f = dataset.entries[i].fold;
    if (f < 0) throw Error(ErrorCode::InvalidConfig, "dataset has no fold assignment");
    (f == fold ? test : rest).push_back(i);
  }
  const auto labels = dataset.labels();
  auto [train, val] = val_split(rest, labels, cfg.val_fraction, stream_seed(job_seed, kValSplit));
  if (train.empty() || val.empty() || test.empty()) throw Error(ErrorCode::Length, "empty train/val/test split");

  const auto stats = fit_norm_stats(dataset, train);
  std::vector<double> weights(kClassCount, 1.0);
  if (cfg.class_weighting) {
    std::vector<std::size_t> counts(kClassCount, 0);
    for (auto i : train) ++counts[static_cast<std::size_t>(labels[i])];
    weights = class_weights(counts);
  }

  if (audit) {
    audit->normalization_fit.insert(audit->normalization_fit.end(), train.begin(), train.end());
    audit->validation.insert(audit->validation.end(), val.begin(), val.end());
    audit->test.insert(audit->test.end(), test.begin(), test.end());
  }

  const auto arch = cfg.resolve_arch(dataset);
  auto params = nn::init_model<float>(arch, stream_seed(job_seed, kInit));
  auto adam = nn::AdamState<float>::zeros_like(params);
  const nn::AdamConfig adam_cfg{cfg.lr};
  std::mt19937_64 shuffle_rng(stream_seed(job_seed, kShuffle));

  TrainedModel result;
  result.train_indices = train;
  result.val_indices = val;
  result.test_indices = test;
  auto& best = result.checkpoint;
  best.subject_id = subject;
  best.fold = fold;
  best.norm_stats = stats;
  best.best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order = train;
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto chunk = std::span(order).subspan(
          start, std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start));
      const auto batch = make_batch(dataset, chunk, stats);
      const auto y = labels_of(dataset, chunk);
      auto fwd = nn::forward(params, batch, nn::Mode::Train, stream_seed(job_seed, kDropout, step++));
      const auto loss = nn::weighted_ce(fwd.logits, y, weights);
      const auto grads = nn::backward(params, fwd.cache, loss.grad);
      nn::adam_step(params, grads, adam, adam_cfg);
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(chunk.size());
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        if (argmax_row(fwd.logits, static_cast<int>(b)) == y[b]) ++correct;
      }
      if (audit) audit->gradient.insert(audit->gradient.end(), chunk.begin(), chunk.end());
    }
    const auto v = run_eval(params, dataset, val, stats, weights, cfg.batch_size);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()),
                    static_cast<double>(correct) / static_cast<double>(order.size()), v.loss, v.accuracy};
    result.history.push_back(rec);
    if (rec.val_loss < best.best_val_loss) {
      best.best_val_loss = rec.val_loss;
      best.best_epoch = epoch;
      best.params = params;
    }
  }
  if (best.params.tensors.empty()) {
    // Non-finite validation loss in every epoch; keep the final parameters.
    best.params = params;
    best.best_epoch = cfg.epochs;
    best.best_val_loss = result.history.back().val_loss;
  }
  return result;
}

Metrics evaluate(const Predictor& predictor, const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<int> truth, predicted;
  for (auto i : indices) {
    const auto& e = dataset.entries.at(i);
    truth.push_back(static_cast<int>(e.label));
    predicted.push_back(predictor(e));
  }
  return compute_metrics(truth, predicted);
}

Metrics evaluate(const Checkpoint& checkpoint, const Dataset& dataset, std::span<const std::size_t> indices) {
  const auto outcome = run_eval(checkpoint.params, dataset, indices, checkpoint.norm_stats, {}, 64);
  std::vector<int> truth;
  for (auto i : indices) truth.push_back(static_cast<int>(dataset.entries.at(i).label));
  return compute_metrics(truth, outcome.predicted);
}

std::vector<std::array<double, kClassCount>> predict_proba(const Checkpoint& checkpoint, const Dataset& dataset,
                                                           std::span<const std::size_t> indices) {
  std::vector<std::array<double, kClassCount>> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += 64) {
    const auto chunk = indices.subspan(start, std::min<std::size_t>(64, indices.size() - start));
    const auto fwd = nn::forward(checkpoint.params, make_batch(dataset, chunk, checkpoint.norm_stats), nn::Mode::Eval);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto* row = fwd.logits.data.data() + r * kClassCount;
      const auto p = nn::softmax(std::vector<double>(row, row + kClassCount));
      out.push_back({p[0], p[1], p[2]});
    }
  }
  return out;
}

void summarize(CvResult& result) {
  std::vector<Metrics> all_folds;
  double mean = 0.0;
  for (auto& sr : result.subjects) {
    std::vector<Metrics> folds;
    double acc = 0.0;
    for (const auto& f : sr.folds) {
      acc += f.metrics.accuracy;
      folds.push_back(f.metrics);
    }
    sr.mean_accuracy = sr.folds.empty() ? 0.0 : acc / static_cast<double>(sr.folds.size());
    sr.pooled = pool_metrics(folds);
    all_folds.insert(all_folds.end(), folds.begin(), folds.end());
    mean += sr.mean_accuracy;
  }
  result.mean_of_subject_means = result.subjects.empty() ? 0.0 : mean / static_cast<double>(result.subjects.size());
  result.pooled = pool_metrics(all_folds);
  result.pooled_accuracy = result.pooled.accuracy;
}

CvResult cross_validate(const Dataset& dataset, const TrainConfig& cfg, const FoldCallback& on_fold,
                        std::vector<IndexAudit>* audits) {
  cfg.validate();
  const Dataset* source = &dataset;
  Dataset assigned;
  const bool has_folds = std::all_of(dataset.entries.begin(), dataset.entries.end(),
                                     [&](const auto& e) { return e.fold >= 0 && e.fold < cfg.k_folds; });
  if (!has_folds || dataset.k_folds != cfg.k_folds) {
    assigned = dataset;
    assign_folds(assigned, cfg.k_folds, cfg.seed);
    source = &assigned;
  }

  CvResult result;
  for (const auto& subject : source->subjects()) {
    const auto global = source->indices_of(subject);
    const Dataset sub = source->subset(subject);
    SubjectResult sr;
    sr.subject_id = subject;
    for (int fold = 0; fold < cfg.k_folds; ++fold) {
      IndexAudit local;
      auto trained = train_one(sub, fold, cfg, audits ? &local : nullptr);
      const auto metrics = evaluate(trained.checkpoint, sub, trained.test_indices);
      if (audits) {
        auto remap = [&](std::vector<std::size_t>& v) {
          for (auto& i : v) i = global[i];
        };
        remap(local.normalization_fit);
        remap(local.gradient);
        remap(local.validation);
        remap(local.test);
        audits->push_back(std::move(local));
      }
      if (on_fold) on_fold(subject, trained, metrics);
      sr.folds.push_back({fold, metrics, trained.checkpoint.best_epoch, trained.checkpoint.best_val_loss,
                          std::move(trained.history)});
    }
    result.subjects.push_back(std::move(sr));
  }
  summarize(result);
  return result;
}

nlohmann::json history_json(const std::vector<EpochRecord>& history) {
  auto out = nlohmann::json::array();
  for (const auto& h : history) {
    out.push_back({{"epoch", h.epoch},
                   {"train_loss", h.train_loss},
                   {"train_accuracy", h.train_accuracy},
                   {"val_loss", h.val_loss},
                   {"val_accuracy", h.val_accuracy}});
  }
  return out;
}

nlohmann::json CvResult::to_json() const {
  nlohmann::json j;
  j["mean_of_subject_means"] = mean_of_subject_means;
  j["pooled_accuracy"] = pooled_accuracy;
  j["pooled"] = pooled.to_json();
  auto& subs = j["subjects"] = nlohmann::json::array();
  for (const auto& s : subjects) {
    nlohmann::json sj{{"subject_id", s.subject_id}, {"mean_accuracy", s.mean_accuracy}, {"pooled", s.pooled.to_json()}};
    auto& folds = sj["folds"] = nlohmann::json::array();
    for (const auto& f : s.folds) {
      folds.push_back({{"fold", f.fold},
                       {"metrics", f.metrics.to_json()},
                       {"best_epoch", f.best_epoch},
                       {"best_val_loss", f.best_val_loss}});
    }
    subs.push_back(std::move(sj));
  }
  return j;
}

std::string confusion_csv(const Metrics& metrics, bool normalized) {
  static constexpr const char* names[kClassCount] = {"Baseline", "Stroop", "StroopFlex"};
  std::ostringstream out;
  out.precision(17);
  out << "true\\predicted";
  for (const char* n : names) out << ',' << n;
  out << '\n';
  for (int i = 0; i < kClassCount; ++i) {
    out << names[i];
    for (int j = 0; j < kClassCount; ++j) {
      out << ',';
      if (normalized) out << metrics.confusion_normalized[i][j];
      else out << metrics.confusion[i][j];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace skna
