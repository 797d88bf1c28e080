#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skna/dataset.hpp"
#include "skna/nn.hpp"

namespace skna {

struct TrainConfig {
  int batch_size = 32;
  double lr = 0.001;
  int epochs = 200;
  double dropout = 0.2;
  int k_folds = 5;
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
  bool class_weighting = true;
  // Empty layer list means ArchSpec::production sized to the dataset.
  nn::ArchSpec arch{{0, 0, 0}, {}};

  void validate() const;
  nn::ArchSpec resolve_arch(const Dataset& dataset) const;
  nlohmann::json to_json() const;
};

struct Metrics {
  double accuracy = 0.0;
  std::array<std::array<std::size_t, kClassCount>, kClassCount> confusion{};  // [true][predicted]
  std::array<std::array<double, kClassCount>, kClassCount> confusion_normalized{};
  std::array<double, kClassCount> precision{};
  std::array<double, kClassCount> recall{};

  std::size_t total() const;
  nlohmann::json to_json() const;
};

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted);

// Pools raw confusion counts, then recomputes every derived field.
Metrics pool_metrics(std::span<const Metrics> parts);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct Checkpoint {
  nn::ModelParams<float> params;
  std::string subject_id;
  int fold = 0;
  std::map<std::string, NormStats> norm_stats;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Dataset indices touched by each stage of one training job.
struct IndexAudit {
  std::vector<std::size_t> normalization_fit;
  std::vector<std::size_t> gradient;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct TrainedModel {
  Checkpoint checkpoint;
  std::vector<EpochRecord> history;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
  std::vector<std::size_t> test_indices;
};

// Test = entries of `fold`; validation = stratified share of the rest.
// Keeps the parameters of the epoch with the lowest validation loss.
TrainedModel train_one(const Dataset& dataset, int fold, const TrainConfig& cfg,
                       IndexAudit* audit = nullptr);

using Predictor = std::function<int(const DatasetEntry&)>;

Metrics evaluate(const Predictor& predictor, const Dataset& dataset, std::span<const std::size_t> indices);

// Eval-mode CNN inference with the checkpoint's normalization.
Metrics evaluate(const Checkpoint& checkpoint, const Dataset& dataset, std::span<const std::size_t> indices);

// Class probabilities for each listed entry, in index order.
std::vector<std::array<double, kClassCount>> predict_proba(const Checkpoint& checkpoint, const Dataset& dataset,
                                                           std::span<const std::size_t> indices);

struct FoldResult {
  int fold = 0;
  Metrics metrics;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
};

struct SubjectResult {
  std::string subject_id;
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;  // unweighted over folds
  Metrics pooled;
};

struct CvResult {
  std::vector<SubjectResult> subjects;
  double mean_of_subject_means = 0.0;  // headline
  double pooled_accuracy = 0.0;
  Metrics pooled;

  nlohmann::json to_json() const;
};

// Fills subject means, pooled metrics and the headline from per-fold metrics.
void summarize(CvResult& result);

using FoldCallback = std::function<void(const std::string& subject, const TrainedModel&, const Metrics&)>;

// Subject-specific k-fold CV. Entries without a fold id are assigned folds
// from cfg.seed first. Audits, when requested, hold dataset-level indices,
// one per (subject, fold) job.
CvResult cross_validate(const Dataset& dataset, const TrainConfig& cfg,
                        const FoldCallback& on_fold = {}, std::vector<IndexAudit>* audits = nullptr);

std::string confusion_csv(const Metrics& metrics, bool normalized);
nlohmann::json history_json(const std::vector<EpochRecord>& history);

}  // namespace skna
