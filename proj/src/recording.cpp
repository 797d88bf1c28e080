#include "skna/recording.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "skna/container.hpp"
#include "skna/error.hpp"

namespace skna {

namespace {

constexpr Magic kRecordingMagic = {'S', 'K', 'N', 'A', 'R', 'E', 'C', '\0'};

constexpr const char* kPhaseNames[kPhaseCount] = {"Baseline1", "Stroop1", "Baseline2",
                                                  "Stroop2", "PostTaskFlex"};

}  // namespace

const char* to_string(Phase phase) { return kPhaseNames[static_cast<int>(phase)]; }

Phase phase_from_string(const std::string& name) {
  for (int i = 0; i < kPhaseCount; ++i) {
    if (name == kPhaseNames[i]) return static_cast<Phase>(i);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown phase '" + name + "'");
}

std::size_t Recording::sample_count() const {
  return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
}

void Recording::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(sample_rate_hz >= kMinSampleRateHz)) fail("sample rate below 2000 Hz");
  if (!(duration_s > 0.0)) fail("duration must be positive");
  const auto n = sample_count();
  for (const auto& ch : channels) {
    if (ch.samples.size() != n) fail("channel '" + ch.name + "' has wrong length");
  }
  double prev = -1.0;
  int last_phase = -1;
  for (const auto& ev : annotations) {
    if (ev.time_s < 0.0 || ev.time_s > duration_s) fail("annotation outside recording");
    if (ev.time_s < prev) fail("annotations not sorted");
    prev = ev.time_s;
    if (ev.kind == EventKind::PhaseStart) {
      if (static_cast<int>(ev.phase) <= last_phase) fail("phase starts out of order");
      last_phase = static_cast<int>(ev.phase);
    } else if (ev.channel < 0 || ev.channel >= static_cast<int>(channels.size())) {
      fail("flexion on unknown channel");
    }
  }
}

std::pair<double, double> phase_span(const Recording& rec, Phase phase) {
  auto it = std::find_if(rec.annotations.begin(), rec.annotations.end(), [&](const auto& ev) {
    return ev.kind == EventKind::PhaseStart && ev.phase == phase;
  });
  if (it == rec.annotations.end()) {
    throw Error(ErrorCode::NotFound, std::string("phase ") + to_string(phase) + " not annotated");
  }
  const double start = it->time_s;
  auto next = std::find_if(std::next(it), rec.annotations.end(),
                           [](const auto& ev) { return ev.kind == EventKind::PhaseStart; });
  return {start, next == rec.annotations.end() ? rec.duration_s : next->time_s};
}

std::optional<Phase> phase_at(const Recording& rec, double t_s) {
  std::optional<Phase> current;
  for (const auto& ev : rec.annotations) {
    if (ev.time_s > t_s) break;
    if (ev.kind == EventKind::PhaseStart) current = ev.phase;
  }
  return current;
}

std::vector<std::uint8_t> encode_recording(const Recording& rec) {
  rec.validate();
  nlohmann::json meta;
  meta["subject_id"] = rec.subject_id;
  meta["sample_rate_hz"] = rec.sample_rate_hz;
  meta["duration_s"] = rec.duration_s;
  meta["samples_per_channel"] = rec.sample_count();
  auto& names = meta["channels"] = nlohmann::json::array();
  for (const auto& ch : rec.channels) names.push_back(ch.name);
  auto& events = meta["annotations"] = nlohmann::json::array();
  for (const auto& ev : rec.annotations) {
    if (ev.kind == EventKind::PhaseStart) {
      events.push_back({{"t", ev.time_s}, {"kind", "phase_start"}, {"phase", to_string(ev.phase)}});
    } else {
      events.push_back({{"t", ev.time_s}, {"kind", "flexion"}, {"channel", ev.channel}});
    }
  }

  std::vector<float> payload;
  payload.reserve(rec.channels.size() * rec.sample_count());
  for (const auto& ch : rec.channels) {
    payload.insert(payload.end(), ch.samples.begin(), ch.samples.end());
  }
  return encode_container(kRecordingMagic, kRecordingVersion, meta.dump(), payload);
}

Recording decode_recording(const std::vector<std::uint8_t>& bytes) {
  auto c = decode_container(kRecordingMagic, kRecordingVersion, bytes);
  Recording rec;
  try {
    const auto meta = nlohmann::json::parse(c.metadata);
    rec.subject_id = meta.at("subject_id").get<std::string>();
    rec.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
    rec.duration_s = meta.at("duration_s").get<double>();
    const auto n = meta.at("samples_per_channel").get<std::size_t>();
    const auto& names = meta.at("channels");
    if (c.payload.size() != n * names.size()) {
      throw Error(ErrorCode::Truncated, "payload size does not match channel layout");
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto first = c.payload.begin() + static_cast<std::ptrdiff_t>(i * n);
      rec.channels.push_back({names[i].get<std::string>(), std::vector<float>(first, first + static_cast<std::ptrdiff_t>(n))});
    }
    for (const auto& ev : meta.at("annotations")) {
      const auto kind = ev.at("kind").get<std::string>();
      const double t = ev.at("t").get<double>();
      if (kind == "phase_start") {
        rec.annotations.push_back(
            AnnotationEvent::phase_start(t, phase_from_string(ev.at("phase").get<std::string>())));
      } else if (kind == "flexion") {
        rec.annotations.push_back(AnnotationEvent::flexion(t, ev.at("channel").get<int>()));
      } else {
        throw Error(ErrorCode::InvalidConfig, "unknown annotation kind '" + kind + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Truncated, std::string("malformed recording metadata: ") + e.what());
  }
  rec.validate();
  return rec;
}

void save_recording(const Recording& rec, const std::filesystem::path& path) {
  write_file_atomic(path, encode_recording(rec));
}

Recording load_recording(const std::filesystem::path& path) {
  return decode_recording(read_file(path));
}

}  // namespace skna
