#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace skna {

// Protocol phases, in the order they are recorded.
enum class Phase : std::uint8_t { Baseline1, Stroop1, Baseline2, Stroop2, PostTaskFlex };

inline constexpr int kPhaseCount = 5;

const char* to_string(Phase phase);
Phase phase_from_string(const std::string& name);

inline bool is_stroop(Phase p) { return p == Phase::Stroop1 || p == Phase::Stroop2; }
inline bool is_baseline(Phase p) { return p == Phase::Baseline1 || p == Phase::Baseline2; }

enum class EventKind : std::uint8_t { PhaseStart, Flexion };

struct AnnotationEvent {
  double time_s = 0.0;
  EventKind kind = EventKind::PhaseStart;
  Phase phase = Phase::Baseline1;  // meaningful for PhaseStart
  int channel = 0;                 // meaningful for Flexion

  static AnnotationEvent phase_start(double t, Phase p) {
    return {t, EventKind::PhaseStart, p, 0};
  }
  static AnnotationEvent flexion(double t, int channel) {
    return {t, EventKind::Flexion, Phase::Baseline1, channel};
  }

  bool operator==(const AnnotationEvent&) const = default;
};

struct Channel {
  std::string name;
  std::vector<float> samples;  // volts

  bool operator==(const Channel&) const = default;
};

struct Recording {
  std::string subject_id;
  double sample_rate_hz = 10000.0;
  double duration_s = 0.0;
  std::vector<Channel> channels;
  std::vector<AnnotationEvent> annotations;

  std::size_t sample_count() const;

  // Throws Error(InvalidConfig) if any structural invariant is broken.
  void validate() const;

  bool operator==(const Recording&) const = default;
};

inline constexpr double kMinSampleRateHz = 2000.0;

// Span between the phase's start annotation and the next phase start, or the
// end of the recording for the last phase.
std::pair<double, double> phase_span(const Recording& rec, Phase phase);

// Phase in effect at time t, if any phase has started by then.
std::optional<Phase> phase_at(const Recording& rec, double t_s);

void save_recording(const Recording& rec, const std::filesystem::path& path);
Recording load_recording(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_recording(const Recording& rec);
Recording decode_recording(const std::vector<std::uint8_t>& bytes);

inline constexpr std::uint16_t kRecordingVersion = 1;

}  // namespace skna
