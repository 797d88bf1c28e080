#include "skna/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "skna/container.hpp"
#include "skna/error.hpp"
#include "skna/seed.hpp"

namespace skna {

namespace {

constexpr Magic kDatasetMagic = {'S', 'K', 'N', 'A', 'D', 'S', 'E', 'T'};
constexpr const char* kLabelNames[] = {"Baseline", "Stroop", "StroopFlex", "RestFlex"};

std::vector<double> channel_as_double(const Recording& rec, int channel) {
  const auto& s = rec.channels.at(static_cast<std::size_t>(channel)).samples;
  return {s.begin(), s.end()};
}

}  // namespace

const char* to_string(SegmentLabel label) { return kLabelNames[static_cast<int>(label)]; }

SegmentLabel label_from_string(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    if (name == kLabelNames[i]) return static_cast<SegmentLabel>(i);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown label '" + name + "'");
}

void LabelRules::validate() const {
  if (annotation_error_s < 0.0 || flex_length_s < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "label rule durations must be >= 0");
  }
  if (!(overlap_threshold > 0.0 && overlap_threshold < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "overlap threshold must lie in (0, 1)");
  }
}

std::vector<Segment> segment_channel(const Recording& rec, int channel, double window_s,
                                     std::span<const double> source) {
  if (channel < 0 || channel >= static_cast<int>(rec.channels.size())) {
    throw Error(ErrorCode::NotFound, "no channel " + std::to_string(channel));
  }
  if (!(window_s > 0.0)) throw Error(ErrorCode::InvalidConfig, "window must be positive");
  if (rec.duration_s < window_s || rec.sample_count() == 0) {
    throw Error(ErrorCode::Length, "recording shorter than one window");
  }
  const auto& raw = rec.channels[static_cast<std::size_t>(channel)].samples;
  if (!source.empty() && source.size() != raw.size()) {
    throw Error(ErrorCode::Shape, "filtered source length differs from channel length");
  }

  std::vector<std::pair<double, double>> spans;
  for (const auto& ev : rec.annotations) {
    if (ev.kind == EventKind::PhaseStart) spans.push_back(phase_span(rec, ev.phase));
  }
  if (spans.empty()) spans.emplace_back(0.0, rec.duration_s);

  const double fs = rec.sample_rate_hz;
  const auto len = static_cast<std::size_t>(std::llround(window_s * fs));
  std::vector<Segment> out;
  for (const auto& [start, end] : spans) {
    const auto count = static_cast<std::size_t>(std::floor((end - start) / window_s + 1e-9));
    for (std::size_t j = 0; j < count; ++j) {
      const double t = start + static_cast<double>(j) * window_s;
      const auto i0 = static_cast<std::size_t>(std::llround(t * fs));
      if (i0 + len > raw.size()) break;
      Segment seg{channel, t, window_s, std::vector<double>(len)};
      for (std::size_t i = 0; i < len; ++i) {
        seg.samples[i] = source.empty() ? static_cast<double>(raw[i0 + i]) : source[i0 + i];
      }
      out.push_back(std::move(seg));
    }
  }
  return out;
}

std::pair<double, double> flexion_window(double event_time_s, const LabelRules& rules) {
  return {event_time_s - rules.annotation_error_s,
          event_time_s + rules.annotation_error_s + rules.flex_length_s};
}

LabelingResult label_segments(const std::vector<Segment>& segments, const Recording& rec,
                              const LabelRules& rules) {
  rules.validate();
  LabelingResult result;
  for (const auto& seg : segments) {
    const auto phase = phase_at(rec, seg.t_start_s);
    std::optional<SegmentLabel> label;
    if (phase) {
      double best = 0.0;
      for (const auto& ev : rec.annotations) {
        if (ev.kind != EventKind::Flexion || ev.channel != seg.channel) continue;
        auto [lo, hi] = flexion_window(ev.time_s, rules);
        lo = std::max(lo, 0.0);
        hi = std::min(hi, rec.duration_s);
        const double overlap =
            std::min(seg.t_start_s + seg.duration_s, hi) - std::max(seg.t_start_s, lo);
        best = std::max(best, overlap);
      }
      const bool flexing = best > rules.overlap_threshold * seg.duration_s;
      if (is_baseline(*phase)) {
        label = SegmentLabel::Baseline;
      } else if (is_stroop(*phase)) {
        label = flexing ? SegmentLabel::StroopFlex : SegmentLabel::Stroop;
      } else if (flexing) {
        label = SegmentLabel::RestFlex;
      }
    }
    result.per_segment.push_back(label);
    if (!label) {
      ++result.excluded;
      continue;
    }
    result.segments.push_back({rec.subject_id, seg.channel, seg.t_start_s, seg.samples, *label});
  }
  return result;
}

std::vector<double> class_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw Error(ErrorCode::InvalidConfig, "no classes");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  std::vector<double> w;
  for (auto n : counts) {
    if (n == 0) throw Error(ErrorCode::InvalidConfig, "class with zero samples");
    w.push_back(total / (static_cast<double>(counts.size()) * static_cast<double>(n)));
  }
  return w;
}

std::vector<int> split_folds(std::span<const SegmentLabel> labels, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidConfig, "need at least 2 folds");
  std::map<SegmentLabel, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  std::vector<int> fold(labels.size(), -1);
  std::mt19937_64 rng(seed);
  std::size_t offset = 0;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorCode::Stratification,
                  std::string("class ") + to_string(label) + " has fewer samples than folds");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    // Rotating the start keeps total fold sizes balanced across classes.
    for (std::size_t j = 0; j < idx.size(); ++j) {
      fold[idx[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(k));
    }
    offset += idx.size();
  }
  return fold;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> val_split(
    std::span<const std::size_t> indices, std::span<const SegmentLabel> labels, double fraction,
    std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "validation fraction must lie in (0, 1)");
  }
  std::map<SegmentLabel, std::vector<std::size_t>> by_class;
  for (auto i : indices) by_class[labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, val;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

std::array<std::size_t, kClassCount> Dataset::class_counts() const {
  std::array<std::size_t, kClassCount> counts{};
  for (const auto& e : entries) {
    const auto c = static_cast<int>(e.label);
    if (c < kClassCount) ++counts[static_cast<std::size_t>(c)];
  }
  return counts;
}

std::vector<std::string> Dataset::subjects() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (std::find(out.begin(), out.end(), e.subject_id) == out.end()) out.push_back(e.subject_id);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_of(const std::string& subject) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].subject_id == subject) out.push_back(i);
  }
  return out;
}

std::vector<SegmentLabel> Dataset::labels() const {
  std::vector<SegmentLabel> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

Dataset Dataset::subset(const std::string& subject) const {
  Dataset out;
  out.n_bins = n_bins;
  out.n_frames = n_frames;
  out.sample_rate_hz = sample_rate_hz;
  out.k_folds = k_folds;
  for (const auto& e : entries) {
    if (e.subject_id == subject) out.entries.push_back(e);
  }
  if (auto it = norm_stats.find(subject); it != norm_stats.end()) out.norm_stats.insert(*it);
  return out;
}

void assign_folds(Dataset& dataset, int k, std::uint64_t seed) {
  for (const auto& subject : dataset.subjects()) {
    const auto idx = dataset.indices_of(subject);
    std::vector<SegmentLabel> labels;
    for (auto i : idx) labels.push_back(dataset.entries[i].label);
    const auto folds = split_folds(labels, k, derive_seed(seed, subject, 0));
    for (std::size_t j = 0; j < idx.size(); ++j) dataset.entries[idx[j]].fold = folds[j];
  }
  dataset.k_folds = k;
}

std::map<std::string, NormStats> fit_norm_stats(const Dataset& dataset,
                                                std::span<const std::size_t> fit_on) {
  struct Acc {
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, Acc> acc;
  for (auto i : fit_on) {
    const auto& e = dataset.entries.at(i);
    auto& a = acc[e.subject_id];
    for (float v : e.values) {
      a.sum += v;
      a.sum_sq += static_cast<double>(v) * v;
    }
    a.n += e.values.size();
  }
  std::map<std::string, NormStats> stats;
  for (const auto& [subject, a] : acc) {
    const double mean = a.sum / static_cast<double>(a.n);
    const double var = std::max(0.0, a.sum_sq / static_cast<double>(a.n) - mean * mean);
    if (!(var > 0.0)) {
      throw Error(ErrorCode::ZeroVariance, "zero spectrogram variance for subject " + subject);
    }
    stats[subject] = {mean, std::sqrt(var)};
  }
  for (const auto& subject : dataset.subjects()) {
    if (!stats.contains(subject)) {
      throw Error(ErrorCode::NotFound, "subject " + subject + " has no samples in the fit set");
    }
  }
  return stats;
}

void apply_norm_stats(Dataset& dataset, const std::map<std::string, NormStats>& stats) {
  for (auto& e : dataset.entries) {
    const auto it = stats.find(e.subject_id);
    if (it == stats.end()) throw Error(ErrorCode::NotFound, "no normalization for " + e.subject_id);
    const auto [mean, sd] = it->second;
    for (float& v : e.values) v = static_cast<float>((v - mean) / sd);
  }
}

std::pair<Dataset, std::map<std::string, NormStats>> normalize(const Dataset& dataset,
                                                               std::span<const std::size_t> fit_on) {
  auto stats = fit_norm_stats(dataset, fit_on);
  Dataset out = dataset;
  apply_norm_stats(out, stats);
  out.norm_stats = stats;
  return {std::move(out), std::move(stats)};
}

std::vector<float> segment_features(std::span<const double> filtered_volts, double sample_rate_hz) {
  std::vector<double> scaled(filtered_volts.begin(), filtered_volts.end());
  for (double& v : scaled) v *= kDatasetVoltScale;
  return dsp::spectrogram(scaled, sample_rate_hz).power_db;
}

std::vector<LabeledSegment> extract_segments(const Recording& rec, const BuildOptions& options,
                                             std::vector<TimelineRow>* timeline) {
  const auto filter = dsp::design_bandpass(rec.sample_rate_hz, options.band_lo_hz,
                                           options.band_hi_hz, options.filter_order);
  std::vector<LabeledSegment> out;
  for (int channel : options.channels) {
    const auto filtered = dsp::filter_zero_phase(channel_as_double(rec, channel), filter);
    const auto segments = segment_channel(rec, channel, options.window_s, filtered);
    auto labeled = label_segments(segments, rec, options.rules);
    if (timeline) {
      for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto phase = phase_at(rec, segments[i].t_start_s);
        const auto& label = labeled.per_segment[i];
        const bool kept = label && (*label != SegmentLabel::RestFlex || options.keep_rest_flex);
        timeline->push_back({rec.subject_id, channel, segments[i].t_start_s,
                             segments[i].t_start_s + segments[i].duration_s,
                             phase ? to_string(*phase) : "", kept ? to_string(*label) : "excluded"});
      }
    }
    for (auto& seg : labeled.segments) {
      if (seg.label == SegmentLabel::RestFlex && !options.keep_rest_flex) continue;
      out.push_back(std::move(seg));
    }
  }
  return out;
}

void append_recording(Dataset& dataset, const Recording& rec, const BuildOptions& options,
                      std::vector<TimelineRow>* timeline) {
  const auto segments = extract_segments(rec, options, timeline);
  if (dataset.sample_rate_hz == 0.0) dataset.sample_rate_hz = rec.sample_rate_hz;
  if (dataset.sample_rate_hz != rec.sample_rate_hz) {
    throw Error(ErrorCode::Shape, "recordings with different sample rates in one dataset");
  }
  for (const auto& seg : segments) {
    DatasetEntry entry{seg.subject_id, seg.channel, seg.t_start_s, seg.label, -1,
                       segment_features(seg.samples, rec.sample_rate_hz)};
    const int n_bins = dsp::kSpectrogramWindow / 2 + 1;
    const int n_frames = static_cast<int>(entry.values.size()) / n_bins;
    if (dataset.n_bins == 0) {
      dataset.n_bins = n_bins;
      dataset.n_frames = n_frames;
    } else if (dataset.n_bins != n_bins || dataset.n_frames != n_frames) {
      throw Error(ErrorCode::Shape, "spectrogram shape differs across segments");
    }
    dataset.entries.push_back(std::move(entry));
  }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["n_bins"] = dataset.n_bins;
  meta["n_frames"] = dataset.n_frames;
  meta["sample_rate_hz"] = dataset.sample_rate_hz;
  meta["k_folds"] = dataset.k_folds;
  auto& entries = meta["entries"] = nlohmann::json::array();
  std::vector<float> blob;
  const auto per = static_cast<std::size_t>(dataset.n_bins) * static_cast<std::size_t>(dataset.n_frames);
  blob.reserve(per * dataset.size());
  for (const auto& e : dataset.entries) {
    if (e.values.size() != per) throw Error(ErrorCode::Shape, "entry has wrong spectrogram size");
    entries.push_back({{"subject", e.subject_id}, {"channel", e.channel}, {"t_start_s", e.t_start_s},
                       {"label", to_string(e.label)}, {"fold", e.fold}});
    blob.insert(blob.end(), e.values.begin(), e.values.end());
  }
  auto& stats = meta["norm_stats"] = nlohmann::json::object();
  for (const auto& [subject, s] : dataset.norm_stats) stats[subject] = {{"mean", s.mean}, {"std", s.std}};
  write_file_atomic(path, encode_container(kDatasetMagic, kDatasetVersion, meta.dump(), blob));
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto c = decode_container(kDatasetMagic, kDatasetVersion, read_file(path));
  Dataset ds;
  try {
    const auto meta = nlohmann::json::parse(c.metadata);
    ds.n_bins = meta.at("n_bins").get<int>();
    ds.n_frames = meta.at("n_frames").get<int>();
    ds.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
    ds.k_folds = meta.at("k_folds").get<int>();
    const auto per = static_cast<std::size_t>(ds.n_bins) * static_cast<std::size_t>(ds.n_frames);
    const auto& entries = meta.at("entries");
    if (c.payload.size() != per * entries.size()) {
      throw Error(ErrorCode::Truncated, "dataset blob size does not match manifest");
    }
    std::size_t offset = 0;
    for (const auto& j : entries) {
      DatasetEntry e;
      e.subject_id = j.at("subject").get<std::string>();
      e.channel = j.at("channel").get<int>();
      e.t_start_s = j.at("t_start_s").get<double>();
      e.label = label_from_string(j.at("label").get<std::string>());
      e.fold = j.at("fold").get<int>();
      e.values.assign(c.payload.begin() + static_cast<std::ptrdiff_t>(offset),
                      c.payload.begin() + static_cast<std::ptrdiff_t>(offset + per));
      offset += per;
      ds.entries.push_back(std::move(e));
    }
    for (const auto& [subject, s] : meta.at("norm_stats").items()) {
      ds.norm_stats[subject] = {s.at("mean").get<double>(), s.at("std").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Truncated, std::string("malformed dataset manifest: ") + e.what());
  }
  return ds;
}

ConditionPsds condition_psds(std::span<const Recording> recordings, const BuildOptions& options,
                             int signal_channel, int noise_channel) {
  std::vector<dsp::Psd> signal_means, noise_means;
  ConditionPsds out;
  for (const auto& rec : recordings) {
    BuildOptions opts = options;
    opts.channels = {signal_channel, noise_channel};
    opts.keep_rest_flex = true;
    std::vector<dsp::Psd> sig, noise;
    for (const auto& seg : extract_segments(rec, opts)) {
      if (seg.channel == signal_channel && seg.label == SegmentLabel::Stroop) {
        sig.push_back(dsp::welch_psd(seg.samples, rec.sample_rate_hz));
      } else if (seg.channel == noise_channel && seg.label == SegmentLabel::RestFlex) {
        noise.push_back(dsp::welch_psd(seg.samples, rec.sample_rate_hz));
      }
    }
    out.signal_segments += sig.size();
    out.noise_segments += noise.size();
    if (!sig.empty()) signal_means.push_back(dsp::average_psd(sig));
    if (!noise.empty()) noise_means.push_back(dsp::average_psd(noise));
  }
  if (signal_means.empty() || noise_means.empty()) {
    throw Error(ErrorCode::NotFound, "no stress or muscle-noise segments found");
  }
  out.signal = dsp::average_psd(signal_means);
  out.noise = dsp::average_psd(noise_means);
  return out;
}

}  // namespace skna
