#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string_view>

#include <CLI11.hpp>
#include <json.hpp>

#include "skna/container.hpp"
#include "skna/dataset.hpp"
#include "skna/dsp.hpp"
#include "skna/error.hpp"
#include "skna/recording.hpp"
#include "skna/seed.hpp"
#include "skna/synth.hpp"
#include "skna/trainer.hpp"

namespace skna::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return kMissingFile;
    case ErrorCode::InvalidConfig: return kBadFlag;
    case ErrorCode::VersionMismatch: return kVersionMismatch;
    default: return kFailure;
  }
}

std::string abs_path(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

void require_exists(const fs::path& p) {
  if (!fs::exists(p)) throw Error(ErrorCode::NotFound, "no such file or directory: " + p.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

std::string fingerprint(const fs::path& path) {
  const auto bytes = read_file(path);
  std::ostringstream out;
  out << std::hex << hash_string(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  return out.str();
}

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  require_exists(dir);
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorCode::NotFound, "no " + ext + " files in " + dir.string());
  return out;
}

std::ostringstream csv_stream() {
  std::ostringstream out;
  out.precision(17);
  return out;
}

std::string curve_csv(std::span<const double> freq, std::span<const double> value) {
  auto out = csv_stream();
  out << "freq_hz,value\n";
  for (std::size_t i = 0; i < freq.size(); ++i) {
    out << freq[i] << ',';
    if (std::isnan(value[i])) out << "nan";
    else out << value[i];
    out << '\n';
  }
  return out.str();
}

// Everything needed to rerun a command and check that it reproduced.
struct Manifest {
  std::string command;
  std::vector<std::string> args;  // replayable, absolute paths
  json config = json::object();
  json seeds = json::object();
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;

  json to_json(double wall_time_s) const {
    json out_files = json::array();
    for (const auto& p : outputs) out_files.push_back({{"path", abs_path(p)}, {"fnv1a64", fingerprint(p)}});
    json in_files = json::array();
    for (const auto& p : inputs) in_files.push_back(abs_path(p));
    return {{"command", command}, {"args", args},         {"config", config},
            {"seeds", seeds},     {"inputs", in_files},   {"outputs", out_files},
            {"tool_version", kToolVersion}, {"wall_time_s", wall_time_s}};
  }
};

// ---- configuration files -------------------------------------------------

template <typename Fields>
void apply_fields(const json& j, Fields&& fields, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!fields(key, value)) throw Error(ErrorCode::InvalidConfig, "unknown " + what + " key: " + key);
  }
}

json synth_to_json(const SynthConfig& c) {
  return {{"sample_rate_hz", c.sample_rate_hz},
          {"phase_duration_s", c.phase_duration_s},
          {"flexion_count", c.flexion_count},
          {"skna_burst_rate_hz", c.skna_burst_rate_hz},
          {"skna_band_lo_hz", c.skna_band_lo_hz},
          {"skna_band_hi_hz", c.skna_band_hi_hz},
          {"skna_burst_gain", c.skna_burst_gain},
          {"skna_burst_min_s", c.skna_burst_min_s},
          {"skna_burst_max_s", c.skna_burst_max_s},
          {"emg_gain", c.emg_gain},
          {"emg_spectral_tilt", c.emg_spectral_tilt},
          {"flex_duration_s", c.flex_duration_s},
          {"annotation_lead_s", c.annotation_lead_s},
          {"annotation_jitter_s", c.annotation_jitter_s},
          {"ecg_rate_bpm", c.ecg_rate_bpm},
          {"ecg_amplitude", c.ecg_amplitude},
          {"baseline_noise_rms", c.baseline_noise_rms}};
}

void synth_from_json(SynthConfig& c, const json& j) {
  std::map<std::string, double*> scalars{{"sample_rate_hz", &c.sample_rate_hz},
                                         {"skna_burst_rate_hz", &c.skna_burst_rate_hz},
                                         {"skna_band_lo_hz", &c.skna_band_lo_hz},
                                         {"skna_band_hi_hz", &c.skna_band_hi_hz},
                                         {"skna_burst_gain", &c.skna_burst_gain},
                                         {"skna_burst_min_s", &c.skna_burst_min_s},
                                         {"skna_burst_max_s", &c.skna_burst_max_s},
                                         {"emg_gain", &c.emg_gain},
                                         {"emg_spectral_tilt", &c.emg_spectral_tilt},
                                         {"flex_duration_s", &c.flex_duration_s},
                                         {"annotation_lead_s", &c.annotation_lead_s},
                                         {"annotation_jitter_s", &c.annotation_jitter_s},
                                         {"ecg_rate_bpm", &c.ecg_rate_bpm},
                                         {"ecg_amplitude", &c.ecg_amplitude},
                                         {"baseline_noise_rms", &c.baseline_noise_rms}};
  try {
    apply_fields(j, [&](const std::string& key, const json& v) {
      if (auto it = scalars.find(key); it != scalars.end()) {
        *it->second = v.get<double>();
      } else if (key == "phase_duration_s") {
        c.phase_duration_s = v.get<decltype(c.phase_duration_s)>();
      } else if (key == "flexion_count") {
        c.flexion_count = v.get<decltype(c.flexion_count)>();
      } else {
        return false;
      }
      return true;
    }, "synth config");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("synth config: ") + e.what());
  }
}

json rules_to_json(const LabelRules& r) {
  return {{"annotation_error_s", r.annotation_error_s},
          {"flex_length_s", r.flex_length_s},
          {"overlap_threshold", r.overlap_threshold}};
}

void rules_from_json(LabelRules& r, const json& j) {
  std::map<std::string, double*> fields{{"annotation_error_s", &r.annotation_error_s},
                                        {"flex_length_s", &r.flex_length_s},
                                        {"overlap_threshold", &r.overlap_threshold}};
  try {
    apply_fields(j, [&](const std::string& key, const json& v) {
      auto it = fields.find(key);
      if (it == fields.end()) return false;
      *it->second = v.get<double>();
      return true;
    }, "rules");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("rules: ") + e.what());
  }
}

// ---- commands --------------------------------------------------------------

struct SynthArgs {
  int subjects = 12;
  std::uint64_t seed = 1;
  std::string out;
  std::string config;
};

Manifest cmd_synth(const SynthArgs& a, std::ostream& log) {
  Manifest m;
  m.args = {"synth", "--subjects", std::to_string(a.subjects), "--seed", std::to_string(a.seed), "--out", abs_path(a.out)};
  SynthConfig base;
  if (!a.config.empty()) {
    require_exists(a.config);
    synth_from_json(base, read_json(a.config));
    m.inputs.push_back(a.config);
    m.args.insert(m.args.end(), {"--config", abs_path(a.config)});
  }
  base.validate();
  fs::create_directories(a.out);
  m.config = synth_to_json(base);
  m.seeds["corpus"] = a.seed;
  for (int i = 0; i < a.subjects; ++i) {
    const auto cfg = subject_config(base, i, a.seed);
    const fs::path path = fs::path(a.out) / (cfg.subject_id + ".skna");
    save_recording(synth_recording(cfg), path);
    m.seeds["subjects"][cfg.subject_id] = cfg.seed;
    m.outputs.push_back(path);
    log << "wrote " << path.string() << '\n';
  }
  return m;
}

struct PreprocessArgs {
  std::string in;
  std::string out;
  std::string rules;
  int folds = 5;
  std::uint64_t seed = 1;
  bool keep_rest_flex = false;
};

fs::path timeline_path(const fs::path& dataset_path) {
  return dataset_path.parent_path() / (dataset_path.stem().string() + ".timeline.csv");
}

Manifest cmd_preprocess(const PreprocessArgs& a, std::ostream& log) {
  Manifest m;
  m.args = {"preprocess", "--in", abs_path(a.in), "--out", abs_path(a.out), "--folds", std::to_string(a.folds),
            "--seed", std::to_string(a.seed)};
  BuildOptions options;
  options.keep_rest_flex = a.keep_rest_flex;
  if (a.keep_rest_flex) m.args.push_back("--keep-rest-flex");
  if (!a.rules.empty()) {
    require_exists(a.rules);
    rules_from_json(options.rules, read_json(a.rules));
    m.inputs.push_back(a.rules);
    m.args.insert(m.args.end(), {"--rules", abs_path(a.rules)});
  }
  options.rules.validate();
  if (a.folds < 2) throw Error(ErrorCode::InvalidConfig, "--folds must be at least 2");

  Dataset ds;
  std::vector<TimelineRow> timeline;
  for (const auto& path : files_with_extension(a.in, ".skna")) {
    append_recording(ds, load_recording(path), options, &timeline);
    m.inputs.push_back(path);
  }
  assign_folds(ds, a.folds, a.seed);

  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_dataset(ds, a.out);
  auto csv = csv_stream();
  csv << "subject_id,channel,t_start_s,t_end_s,phase,label\n";
  for (const auto& r : timeline) {
    csv << r.subject_id << ',' << r.channel << ',' << r.t_start_s << ',' << r.t_end_s << ',' << r.phase << ','
        << r.label << '\n';
  }
  write_text(timeline_path(a.out), csv.str());
  m.outputs = {a.out, timeline_path(a.out)};

  m.config = {{"rules", rules_to_json(options.rules)}, {"channels", options.channels},
              {"window_s", options.window_s},         {"filter_order", options.filter_order},
              {"band_hz", {options.band_lo_hz, options.band_hi_hz}},
              {"keep_rest_flex", options.keep_rest_flex}, {"folds", a.folds}};
  m.seeds["folds"] = a.seed;
  const auto counts = ds.class_counts();
  log << ds.size() << " segments from " << ds.subjects().size() << " subjects (Baseline " << counts[0]
      << ", Stroop " << counts[1] << ", StroopFlex " << counts[2] << ")\n";
  return m;
}

std::vector<Recording> load_recordings(const std::string& dir, Manifest& m) {
  std::vector<Recording> out;
  for (const auto& path : files_with_extension(dir, ".skna")) {
    out.push_back(load_recording(path));
    m.inputs.push_back(path);
  }
  return out;
}

json band_json(const dsp::Band& b) { return {{"lo_hz", b.lo_hz}, {"hi_hz", b.hi_hz}, {"width_hz", b.width()}}; }

Manifest cmd_psd(const std::string& in, const std::string& out, std::ostream& log) {
  Manifest m;
  m.args = {"psd", "--in", abs_path(in), "--out", abs_path(out)};
  const auto recordings = load_recordings(in, m);
  const auto psds = condition_psds(recordings, BuildOptions{});
  fs::create_directories(out);
  const fs::path signal_csv = fs::path(out) / "signal_psd.csv";
  const fs::path noise_csv = fs::path(out) / "noise_psd.csv";
  const fs::path report = fs::path(out) / "bands.json";
  write_text(signal_csv, curve_csv(psds.signal.freq_axis_hz, psds.signal.power_density));
  write_text(noise_csv, curve_csv(psds.noise.freq_axis_hz, psds.noise.power_density));

  const auto signal_band = dsp::energy_band(psds.signal);
  const auto noise_band = dsp::energy_band(psds.noise);
  const double signal_power = dsp::band_power(psds.signal, 500.0, 1000.0);
  const double noise_power = dsp::band_power(psds.noise, 500.0, 1000.0);
  const json r = {{"signal_band", band_json(signal_band)},
                  {"noise_band", band_json(noise_band)},
                  {"signal_power_500_1000", signal_power},
                  {"noise_power_500_1000", noise_power},
                  {"noise_to_signal_db", 10.0 * std::log10(noise_power / signal_power)},
                  {"signal_segments", psds.signal_segments},
                  {"noise_segments", psds.noise_segments}};
  write_text(report, r.dump(2) + "\n");
  m.outputs = {signal_csv, noise_csv, report};
  m.config = {{"search_band_hz", {500.0, 1000.0}}, {"energy_fraction", 0.95}};
  log << "signal 95% band " << signal_band.lo_hz << "-" << signal_band.hi_hz << " Hz, noise " << noise_band.lo_hz
      << "-" << noise_band.hi_hz << " Hz\n";
  return m;
}

Manifest cmd_smir(const std::string& in, const std::string& out, std::ostream& log) {
  Manifest m;
  m.args = {"smir", "--in", abs_path(in), "--out", abs_path(out)};
  const auto recordings = load_recordings(in, m);
  const auto psds = condition_psds(recordings, BuildOptions{});
  const auto curve = dsp::smir(psds.signal, psds.noise);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_text(out, curve_csv(curve.freq_axis_hz, curve.smir_db));
  m.outputs = {out};
  m.config = {{"band_hz", {500.0, 1000.0}}};
  log << "mean SMIR 500-700 Hz " << curve.mean_db(500.0, 700.0) << " dB, 700-1000 Hz "
      << curve.mean_db(700.0, 1000.0) << " dB\n";
  return m;
}

struct TrainArgs {
  std::string data;
  std::string subject;
  std::string out;
  TrainConfig cfg;
  bool no_class_weights = false;
};

std::string model_stem(const std::string& subject, int fold) {
  return subject + "_fold" + std::to_string(fold);
}

Manifest cmd_train(const TrainArgs& a, std::ostream& log) {
  Manifest m;
  auto cfg = a.cfg;
  cfg.class_weighting = !a.no_class_weights;
  cfg.validate();
  std::ostringstream lr;
  lr.precision(17);
  lr << cfg.lr;
  std::ostringstream dropout;
  dropout.precision(17);
  dropout << cfg.dropout;
  m.args = {"train", "--data", abs_path(a.data), "--folds", std::to_string(cfg.k_folds), "--epochs",
            std::to_string(cfg.epochs), "--seed", std::to_string(cfg.seed), "--batch-size",
            std::to_string(cfg.batch_size), "--lr", lr.str(), "--dropout", dropout.str(), "--out", abs_path(a.out)};
  if (!a.subject.empty()) m.args.insert(m.args.end(), {"--subject", a.subject});
  if (a.no_class_weights) m.args.push_back("--no-class-weights");

  require_exists(a.data);
  auto ds = load_dataset(a.data);
  m.inputs.push_back(a.data);
  const bool has_folds = ds.k_folds == cfg.k_folds &&
                         std::all_of(ds.entries.begin(), ds.entries.end(),
                                     [&](const auto& e) { return e.fold >= 0 && e.fold < cfg.k_folds; });
  if (!has_folds) assign_folds(ds, cfg.k_folds, cfg.seed);

  std::vector<std::string> subjects = ds.subjects();
  if (!a.subject.empty()) {
    if (std::find(subjects.begin(), subjects.end(), a.subject) == subjects.end()) {
      throw Error(ErrorCode::InvalidConfig, "subject " + a.subject + " is not in " + a.data);
    }
    subjects = {a.subject};
  }

  fs::create_directories(a.out);
  json folds = json::object();
  for (const auto& subject : subjects) {
    const Dataset sub = ds.subset(subject);
    auto& ids = folds[subject] = json::array();
    for (const auto& e : sub.entries) ids.push_back(e.fold);
    for (int fold = 0; fold < cfg.k_folds; ++fold) {
      const auto trained = train_one(sub, fold, cfg);
      const fs::path model = fs::path(a.out) / (model_stem(subject, fold) + ".sknamodel");
      const fs::path history = fs::path(a.out) / (model_stem(subject, fold) + "_history.json");
      save_checkpoint(trained.checkpoint, model);
      write_text(history, history_json(trained.history).dump(2) + "\n");
      m.outputs.push_back(model);
      m.outputs.push_back(history);
      log << subject << " fold " << fold << ": best epoch " << trained.checkpoint.best_epoch << ", val loss "
          << trained.checkpoint.best_val_loss << '\n';
    }
  }
  const fs::path folds_path = fs::path(a.out) / "folds.json";
  write_text(folds_path, folds.dump() + "\n");
  m.outputs.push_back(folds_path);
  m.config = cfg.to_json();
  m.seeds = {{"train", cfg.seed}, {"folds_reassigned", !has_folds}};
  return m;
}

Manifest cmd_eval(const std::string& models, const std::string& data, const std::string& out, std::ostream& log) {
  Manifest m;
  m.args = {"eval", "--models", abs_path(models), "--data", abs_path(data), "--out", abs_path(out)};
  require_exists(data);
  auto ds = load_dataset(data);
  m.inputs.push_back(data);

  // Training may have reassigned folds; its record wins over the dataset's.
  const fs::path folds_path = fs::path(models) / "folds.json";
  if (fs::exists(folds_path)) {
    const auto folds = read_json(folds_path);
    m.inputs.push_back(folds_path);
    for (const auto& [subject, ids] : folds.items()) {
      const auto idx = ds.indices_of(subject);
      if (idx.size() != ids.size()) throw Error(ErrorCode::Shape, "folds.json does not match " + data);
      for (std::size_t i = 0; i < idx.size(); ++i) ds.entries[idx[i]].fold = ids[i].get<int>();
    }
  }

  std::map<std::string, std::vector<Checkpoint>> by_subject;
  for (const auto& path : files_with_extension(models, ".sknamodel")) {
    auto c = load_checkpoint(path);
    m.inputs.push_back(path);
    by_subject[c.subject_id].push_back(std::move(c));
  }

  CvResult result;
  for (auto& [subject, checkpoints] : by_subject) {
    std::sort(checkpoints.begin(), checkpoints.end(), [](auto& x, auto& y) { return x.fold < y.fold; });
    const Dataset sub = ds.subset(subject);
    if (sub.size() == 0) throw Error(ErrorCode::NotFound, "subject " + subject + " has no entries in " + data);
    SubjectResult sr;
    sr.subject_id = subject;
    for (const auto& c : checkpoints) {
      std::vector<std::size_t> test;
      for (std::size_t i = 0; i < sub.size(); ++i) {
        if (sub.entries[i].fold == c.fold) test.push_back(i);
      }
      if (test.empty()) throw Error(ErrorCode::Shape, "fold " + std::to_string(c.fold) + " of " + subject + " is empty");
      sr.folds.push_back({c.fold, evaluate(c, sub, test), c.best_epoch, c.best_val_loss, {}});
    }
    result.subjects.push_back(std::move(sr));
  }
  summarize(result);
  for (const auto& sr : result.subjects) log << sr.subject_id << ": mean accuracy " << sr.mean_accuracy << '\n';

  fs::create_directories(out);
  const fs::path metrics_path = fs::path(out) / "metrics.json";
  const fs::path normalized = fs::path(out) / "confusion.csv";
  const fs::path counts = fs::path(out) / "confusion_counts.csv";
  write_text(metrics_path, result.to_json().dump(2) + "\n");
  write_text(normalized, confusion_csv(result.pooled, true));
  write_text(counts, confusion_csv(result.pooled, false));
  m.outputs = {metrics_path, normalized, counts};
  log << "mean of subject means " << result.mean_of_subject_means << ", pooled " << result.pooled_accuracy << '\n';
  return m;
}

Manifest cmd_classify(const std::string& model, const std::string& recording, int channel, const std::string& out,
                      std::ostream& log) {
  Manifest m;
  m.args = {"classify", "--model", abs_path(model), "--recording", abs_path(recording),
            "--channel", std::to_string(channel), "--out", abs_path(out)};
  require_exists(model);
  require_exists(recording);
  const auto checkpoint = load_checkpoint(model);
  const auto rec = load_recording(recording);
  m.inputs = {model, recording};
  if (channel < 0 || channel >= static_cast<int>(rec.channels.size())) {
    throw Error(ErrorCode::InvalidConfig, "--channel " + std::to_string(channel) + " is out of range");
  }

  const BuildOptions options;
  const auto filter = dsp::design_bandpass(rec.sample_rate_hz, options.band_lo_hz, options.band_hi_hz,
                                           options.filter_order);
  const auto& raw = rec.channels[static_cast<std::size_t>(channel)].samples;
  const auto filtered = dsp::filter_zero_phase(std::vector<double>(raw.begin(), raw.end()), filter);
  const auto segments = segment_channel(rec, channel, options.window_s, filtered);

  // Entries carry the checkpoint's subject so its normalization applies.
  Dataset ds;
  ds.n_bins = checkpoint.params.arch.input[1];
  ds.n_frames = checkpoint.params.arch.input[2];
  ds.sample_rate_hz = rec.sample_rate_hz;
  for (const auto& seg : segments) {
    ds.entries.push_back({checkpoint.subject_id, channel, seg.t_start_s, SegmentLabel::Baseline, -1,
                          segment_features(seg.samples, rec.sample_rate_hz)});
  }
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto proba = predict_proba(checkpoint, ds, all);

  auto csv = csv_stream();
  csv << "t_start_s,t_end_s,label,p_baseline,p_stroop,p_stroopflex\n";
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& p = proba[i];
    const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    csv << segments[i].t_start_s << ',' << segments[i].t_start_s + segments[i].duration_s << ','
        << to_string(static_cast<SegmentLabel>(best)) << ',' << p[0] << ',' << p[1] << ',' << p[2] << '\n';
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_text(out, csv.str());
  m.outputs = {out};
  m.config = {{"band_hz", {options.band_lo_hz, options.band_hi_hz}}, {"window_s", options.window_s}};
  log << segments.size() << " segments classified\n";
  return m;
}

fs::path manifest_path(const Manifest& m) {
  // Directory outputs get <command>.manifest.json inside; file outputs a sibling.
  const auto& args = m.args;
  const auto it = std::find(args.begin(), args.end(), "--out");
  const fs::path out = it + 1 < args.end() ? fs::path(*(it + 1)) : fs::path(".");
  if (m.command == "synth" || m.command == "psd" || m.command == "train" || m.command == "eval") {
    return out / (m.command + ".manifest.json");
  }
  return out.string() + ".manifest.json";
}

void print_error(std::ostream& err, const std::string& code, const std::string& message, const json& context) {
  err << json{{"code", code}, {"message", message}, {"context", context}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SKNA muscle-noise screening toolkit", "skna"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate synthetic protocol recordings");
  synth->add_option("--subjects", synth_args.subjects, "Number of subjects")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_args.seed, "Corpus seed");
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--config", synth_args.config, "JSON overrides of generator parameters");

  PreprocessArgs pre_args;
  auto* pre = app.add_subcommand("preprocess", "Filter, segment, label and build a spectrogram dataset");
  pre->add_option("--in", pre_args.in, "Directory of .skna recordings")->required();
  pre->add_option("--out", pre_args.out, "Dataset file (.sknads)")->required();
  pre->add_option("--rules", pre_args.rules, "JSON labeling rules");
  pre->add_option("--folds", pre_args.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  pre->add_option("--seed", pre_args.seed, "Fold assignment seed");
  pre->add_flag("--keep-rest-flex", pre_args.keep_rest_flex, "Keep post-task flexion segments");

  std::string psd_in, psd_out;
  auto* psd = app.add_subcommand("psd", "Per-condition PSDs and 95% energy bands");
  psd->add_option("--in", psd_in, "Directory of .skna recordings")->required();
  psd->add_option("--out", psd_out, "Output directory")->required();

  std::string smir_in, smir_out;
  auto* smir = app.add_subcommand("smir", "Signal-to-muscle-interference ratio curve");
  smir->add_option("--in", smir_in, "Directory of .skna recordings")->required();
  smir->add_option("--out", smir_out, "Output CSV")->required();

  TrainArgs train_args;
  train_args.cfg.epochs = 200;
  auto* train = app.add_subcommand("train", "Subject-specific cross-validated CNN training");
  train->add_option("--data", train_args.data, "Dataset file")->required();
  train->add_option("--subject", train_args.subject, "Train one subject only");
  train->add_option("--folds", train_args.cfg.k_folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  train->add_option("--epochs", train_args.cfg.epochs, "Epochs")->check(CLI::PositiveNumber);
  train->add_option("--seed", train_args.cfg.seed, "Training seed");
  train->add_option("--batch-size", train_args.cfg.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  train->add_option("--lr", train_args.cfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--dropout", train_args.cfg.dropout, "Dropout probability")->check(CLI::Range(0.0, 0.99));
  train->add_flag("--no-class-weights", train_args.no_class_weights, "Unweighted loss");
  train->add_option("--out", train_args.out, "Output directory")->required();

  std::string eval_models, eval_data, eval_out;
  auto* eval = app.add_subcommand("eval", "Test-fold metrics for trained checkpoints");
  eval->add_option("--models", eval_models, "Directory of .sknamodel checkpoints")->required();
  eval->add_option("--data", eval_data, "Dataset file")->required();
  eval->add_option("--out", eval_out, "Output directory")->required();

  std::string cls_model, cls_recording, cls_out;
  int cls_channel = 1;
  auto* classify = app.add_subcommand("classify", "Per-second labels for one recording");
  classify->add_option("--model", cls_model, "Checkpoint")->required();
  classify->add_option("--recording", cls_recording, "Recording (.skna)")->required();
  classify->add_option("--channel", cls_channel, "Channel index");
  classify->add_option("--out", cls_out, "Output CSV")->required();

  std::string replay_manifest;
  auto* replay = app.add_subcommand("replay", "Rerun a manifest and verify its outputs are reproduced");
  replay->add_option("--manifest", replay_manifest, "Manifest written by an earlier command")->required();

  std::vector<std::string> argv_store{"skna"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  std::string command = args.empty() ? "" : args.front();
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, "bad_flag", e.what(), {{"command", command}, {"args", args}});
    return kBadFlag;
  }

  try {
    if (*replay) {
      require_exists(replay_manifest);
      const auto recorded = read_json(replay_manifest);
      const auto replay_args = recorded.at("args").get<std::vector<std::string>>();
      if (replay_args.empty() || replay_args.front() == "replay") {
        throw Error(ErrorCode::InvalidConfig, "manifest does not describe a replayable command");
      }
      const int code = run(replay_args, out, err);
      if (code != kOk) return code;
      std::size_t mismatches = 0;
      for (const auto& o : recorded.at("outputs")) {
        const auto path = o.at("path").get<std::string>();
        if (!fs::exists(path) || fingerprint(path) != o.at("fnv1a64").get<std::string>()) {
          ++mismatches;
          out << "differs: " << path << '\n';
        }
      }
      if (mismatches > 0) {
        print_error(err, "replay_mismatch", std::to_string(mismatches) + " outputs differ",
                    {{"command", "replay"}, {"manifest", replay_manifest}});
        return kFailure;
      }
      out << "replay reproduced " << recorded.at("outputs").size() << " outputs\n";
      return kOk;
    }

    const auto start = std::chrono::steady_clock::now();
    Manifest m;
    if (*synth) m = cmd_synth(synth_args, out);
    else if (*pre) m = cmd_preprocess(pre_args, out);
    else if (*psd) m = cmd_psd(psd_in, psd_out, out);
    else if (*smir) m = cmd_smir(smir_in, smir_out, out);
    else if (*train) m = cmd_train(train_args, out);
    else if (*eval) m = cmd_eval(eval_models, eval_data, eval_out, out);
    else m = cmd_classify(cls_model, cls_recording, cls_channel, cls_out, out);
    m.command = m.args.front();
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(manifest_path(m), m.to_json(wall).dump(2) + "\n");
    return kOk;
  } catch (const Error& e) {
    print_error(err, to_string(e.code()), e.what(), {{"command", command}, {"args", args}});
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    print_error(err, "io", e.what(), {{"command", command}, {"args", args}});
    return kFailure;
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what(), {{"command", command}, {"args", args}});
    return kFailure;
  }
}

}  // namespace skna::cli
