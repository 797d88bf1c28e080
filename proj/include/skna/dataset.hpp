#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skna/dsp.hpp"
#include "skna/recording.hpp"

namespace skna {

enum class SegmentLabel : std::uint8_t { Baseline = 0, Stroop = 1, StroopFlex = 2, RestFlex = 3 };

// Classifier classes are the first three labels; RestFlex is analysis-only.
inline constexpr int kClassCount = 3;

const char* to_string(SegmentLabel label);
SegmentLabel label_from_string(const std::string& name);

struct LabelRules {
  double annotation_error_s = 0.5;
  double flex_length_s = 0.5;
  double overlap_threshold = 0.25;  // fraction of the segment window

  void validate() const;
};

struct Segment {
  int channel = 0;
  double t_start_s = 0.0;
  double duration_s = 0.0;
  std::vector<double> samples;
};

struct LabeledSegment {
  std::string subject_id;
  int channel = 0;
  double t_start_s = 0.0;
  std::vector<double> samples;
  SegmentLabel label = SegmentLabel::Baseline;
};

// Consecutive non-overlapping windows aligned to each phase start (or to t=0
// when no phase is annotated); trailing partial windows are dropped. Samples
// come from `source` when given, else from the raw channel.
std::vector<Segment> segment_channel(const Recording& rec, int channel, double window_s = 1.0,
                                     std::span<const double> source = {});

// [t - annotation_error, t + annotation_error + flex_length]
std::pair<double, double> flexion_window(double event_time_s, const LabelRules& rules);

struct LabelingResult {
  std::vector<LabeledSegment> segments;
  std::vector<std::optional<SegmentLabel>> per_segment;  // parallel to the input
  std::size_t excluded = 0;  // outside any phase, or phase-5 rest without flexion
};

LabelingResult label_segments(const std::vector<Segment>& segments, const Recording& rec,
                              const LabelRules& rules);

// w_c = N / (K * n_c)
std::vector<double> class_weights(std::span<const std::size_t> counts);

// Stratified assignment of each sample to one of k folds.
std::vector<int> split_folds(std::span<const SegmentLabel> labels, int k, std::uint64_t seed);

// Stratified hold-out of `fraction` of the given indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> val_split(
    std::span<const std::size_t> indices, std::span<const SegmentLabel> labels, double fraction,
    std::uint64_t seed);

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  bool operator==(const NormStats&) const = default;
};

struct DatasetEntry {
  std::string subject_id;
  int channel = 0;
  double t_start_s = 0.0;
  SegmentLabel label = SegmentLabel::Baseline;
  int fold = -1;
  std::vector<float> values;  // n_bins x n_frames, row-major, dB

  bool operator==(const DatasetEntry&) const = default;
};

struct Dataset {
  int n_bins = 0;
  int n_frames = 0;
  double sample_rate_hz = 0.0;
  int k_folds = 0;
  std::vector<DatasetEntry> entries;
  std::map<std::string, NormStats> norm_stats;

  std::size_t size() const { return entries.size(); }
  std::array<std::size_t, kClassCount> class_counts() const;
  std::vector<std::string> subjects() const;
  std::vector<std::size_t> indices_of(const std::string& subject) const;
  std::vector<SegmentLabel> labels() const;
  // Copy holding only one subject's entries.
  Dataset subset(const std::string& subject) const;

  bool operator==(const Dataset&) const = default;
};

// Per-subject folds; seeds derived from (seed, subject).
void assign_folds(Dataset& dataset, int k, std::uint64_t seed);

std::map<std::string, NormStats> fit_norm_stats(const Dataset& dataset,
                                                std::span<const std::size_t> fit_on);

void apply_norm_stats(Dataset& dataset, const std::map<std::string, NormStats>& stats);

// Per-subject z-scoring fit on `fit_on` only and applied to every entry.
std::pair<Dataset, std::map<std::string, NormStats>> normalize(const Dataset& dataset,
                                                               std::span<const std::size_t> fit_on);

// Filtered samples are expressed in microvolts before the spectrogram.
inline constexpr double kDatasetVoltScale = 1e6;

struct TimelineRow {
  std::string subject_id;
  int channel = 0;
  double t_start_s = 0.0;
  double t_end_s = 0.0;
  std::string phase;  // empty outside any phase
  std::string label;  // "excluded" when not used
};

struct BuildOptions {
  std::vector<int> channels = {1};  // the moving lead
  LabelRules rules;
  double window_s = 1.0;
  int filter_order = 4;
  double band_lo_hz = 500.0;
  double band_hi_hz = 1000.0;
  bool keep_rest_flex = false;
};

// Band-pass each channel, segment, label and convert to spectrograms.
std::vector<LabeledSegment> extract_segments(const Recording& rec, const BuildOptions& options,
                                             std::vector<TimelineRow>* timeline = nullptr);

void append_recording(Dataset& dataset, const Recording& rec, const BuildOptions& options,
                      std::vector<TimelineRow>* timeline = nullptr);

std::vector<float> segment_features(std::span<const double> filtered_volts, double sample_rate_hz);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

inline constexpr std::uint16_t kDatasetVersion = 1;

struct ConditionPsds {
  dsp::Psd signal;  // stress SKNA: Stroop segments without flexion on the still lead
  dsp::Psd noise;   // muscle noise at rest: phase-5 flexion segments on the moving lead
  std::size_t signal_segments = 0;
  std::size_t noise_segments = 0;
};

// Mean over subjects of each subject's mean segment PSD (filtered, volts).
ConditionPsds condition_psds(std::span<const Recording> recordings, const BuildOptions& options,
                             int signal_channel = 0, int noise_channel = 1);

}  // namespace skna
