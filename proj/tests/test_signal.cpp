#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "skna/container.hpp"
#include "skna/dataset.hpp"
#include "skna/dsp.hpp"
#include "skna/error.hpp"
#include "skna/recording.hpp"
#include "skna/synth.hpp"

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
  return ErrorCode::Io;
}

SynthConfig short_config() {
  SynthConfig cfg;
  cfg.phase_duration_s = {10.0, 20.0, 10.0, 20.0, 20.0};
  cfg.flexion_count = {0, 3, 0, 3, 4};
  cfg.seed = 42;
  return cfg;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("skna_test_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<double> as_double(const std::vector<float>& x) { return {x.begin(), x.end()}; }

double mean_square(const std::vector<double>& x, double fs, double t0, double t1) {
  const auto i0 = static_cast<std::size_t>(std::max(0.0, t0 * fs));
  const auto i1 = std::min(x.size(), static_cast<std::size_t>(t1 * fs));
  double acc = 0.0;
  for (std::size_t i = i0; i < i1; ++i) acc += x[i] * x[i];
  return i1 > i0 ? acc / static_cast<double>(i1 - i0) : 0.0;
}

std::vector<double> flexion_times(const Recording& rec, int channel) {
  std::vector<double> t;
  for (const auto& a : rec.annotations)
    if (a.kind == EventKind::Flexion && a.channel == channel) t.push_back(a.time_s);
  return t;
}

bool near_any(double t, const std::vector<double>& ts, double radius) {
  return std::any_of(ts.begin(), ts.end(), [&](double u) { return std::abs(u - t) < radius; });
}

}  // namespace

TEST_CASE("synthetic recording structure") {
  const auto rec = synth_recording(short_config());
  CHECK_NOTHROW(rec.validate());
  REQUIRE(rec.channels.size() == 2);
  CHECK(rec.channels[0].name == "still");
  CHECK(rec.channels[1].name == "moving");
  CHECK(rec.duration_s == doctest::Approx(80.0));
  CHECK(rec.channels[0].samples.size() == 800000);
  CHECK(std::is_sorted(rec.annotations.begin(), rec.annotations.end(),
                       [](const auto& a, const auto& b) { return a.time_s < b.time_s; }));
  int flex = 0;
  for (const auto& a : rec.annotations) {
    if (a.kind != EventKind::Flexion) continue;
    ++flex;
    CHECK(a.channel == 1);
  }
  CHECK(flex == 10);
  CHECK(flexion_times(rec, 0).empty());
}

TEST_CASE("synthetic recording is deterministic under the seed") {
  const auto cfg = short_config();
  const auto a = encode_recording(synth_recording(cfg));
  const auto b = encode_recording(synth_recording(cfg));
  CHECK(a == b);
  auto other = cfg;
  other.seed = 43;
  CHECK(encode_recording(synth_recording(other)) != a);
}

TEST_CASE("synth config validation") {
  auto cfg = short_config();
  cfg.phase_duration_s[2] = 0.0;
  CHECK(code_of([&] { synth_recording(cfg); }) == ErrorCode::InvalidConfig);
  cfg = short_config();
  cfg.phase_duration_s[0] = -5.0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = short_config();
  cfg.emg_gain = -1.0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = short_config();
  cfg.skna_burst_rate_hz = 0.0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("recording file round trip and corruption") {
  const auto rec = synth_recording(short_config());
  const auto path = temp_path("rec.skna");
  save_recording(rec, path);
  const auto back = load_recording(path);
  CHECK(back == rec);

  auto bytes = read_file(path);
  SUBCASE("checksum") {
    bytes[20] ^= 0x01;
    CHECK(code_of([&] { decode_recording(bytes); }) == ErrorCode::Checksum);
  }
  SUBCASE("payload bit flip") {
    bytes[bytes.size() - 100] ^= 0x80;
    CHECK(code_of([&] { decode_recording(bytes); }) == ErrorCode::Checksum);
  }
  SUBCASE("magic") {
    bytes[0] = 'X';
    CHECK(code_of([&] { decode_recording(bytes); }) == ErrorCode::BadMagic);
  }
  SUBCASE("version") {
    bytes[8] = 7;
    CHECK(code_of([&] { decode_recording(bytes); }) == ErrorCode::VersionMismatch);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() / 2);
    CHECK(code_of([&] { decode_recording(bytes); }) == ErrorCode::Truncated);
  }
  SUBCASE("empty file") {
    { std::ofstream(path, std::ios::trunc); }
    CHECK(code_of([&] { load_recording(path); }) == ErrorCode::Truncated);
  }
  SUBCASE("missing file") {
    CHECK(code_of([&] { load_recording(temp_path("absent.skna")); }) == ErrorCode::NotFound);
  }
  fs::remove(path);
}

TEST_CASE("phase spans") {
  const auto rec = synth_recording(short_config());
  const auto [b0, b1] = phase_span(rec, Phase::Baseline1);
  CHECK(b0 == doctest::Approx(0.0));
  CHECK(b1 == doctest::Approx(10.0));
  const auto [p0, p1] = phase_span(rec, Phase::PostTaskFlex);
  CHECK(p0 == doctest::Approx(60.0));
  CHECK(p1 == doctest::Approx(rec.duration_s));
  CHECK(phase_at(rec, 15.0) == Phase::Stroop1);

  auto partial = rec;
  std::erase_if(partial.annotations, [](const auto& a) {
    return a.kind == EventKind::PhaseStart && a.phase == Phase::Stroop2;
  });
  CHECK(code_of([&] { phase_span(partial, Phase::Stroop2); }) == ErrorCode::NotFound);
}

TEST_CASE("recording validation catches structural errors") {
  auto rec = synth_recording(short_config());
  auto bad = rec;
  bad.channels[1].samples.pop_back();
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
  bad = rec;
  bad.sample_rate_hz = 1000.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
  bad = rec;
  std::swap(bad.annotations[0], bad.annotations[1]);
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("disabled muscle noise leaves flexion windows at the rest level") {
  SynthConfig cfg;
  cfg.phase_duration_s = {10.0, 10.0, 10.0, 10.0, 600.0};
  cfg.flexion_count = {0, 0, 0, 0, 60};
  cfg.emg_gain = 0.0;
  cfg.seed = 9;
  const auto rec = synth_recording(cfg);
  const auto spec = dsp::design_bandpass(rec.sample_rate_hz, 500, 1000, 4);
  const auto y = dsp::filter_zero_phase(as_double(rec.channels[1].samples), spec);
  const auto flex = flexion_times(rec, 1);
  const auto [p0, p1] = phase_span(rec, Phase::PostTaskFlex);

  double flex_ms = 0.0, rest_ms = 0.0;
  int n_flex = 0, n_rest = 0;
  for (double t : flex) {
    const auto [lo, hi] = flexion_window(t, LabelRules{});
    flex_ms += mean_square(y, rec.sample_rate_hz, lo, hi);
    ++n_flex;
  }
  for (double t = p0 + 1.0; t + 1.5 < p1; t += 1.5) {
    if (near_any(t + 0.75, flex, 2.5)) continue;
    rest_ms += mean_square(y, rec.sample_rate_hz, t, t + 1.5);
    ++n_rest;
  }
  REQUIRE(n_flex == 60);
  REQUIRE(n_rest > 100);
  const double ratio = std::sqrt((flex_ms / n_flex) / (rest_ms / n_rest));
  CHECK(ratio == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("muscle noise leaks into the 500-1000 Hz band") {
  SynthConfig cfg;
  cfg.seed = 3;
  const auto rec = synth_recording(cfg);
  const auto x = as_double(rec.channels[1].samples);
  const auto [p0, p1] = phase_span(rec, Phase::PostTaskFlex);
  std::vector<dsp::Psd> psds;
  for (double t : flexion_times(rec, 1)) {
    if (t < p0) continue;
    const auto [lo, hi] = flexion_window(t, LabelRules{});
    const auto i0 = static_cast<std::size_t>(lo * rec.sample_rate_hz);
    const auto i1 = std::min(x.size(), static_cast<std::size_t>(hi * rec.sample_rate_hz));
    psds.push_back(dsp::welch_psd(std::span(x).subspan(i0, i1 - i0), rec.sample_rate_hz));
  }
  REQUIRE(psds.size() == 10);
  const auto avg = dsp::average_psd(psds);
  const double total = dsp::band_power(avg, 0.0, rec.sample_rate_hz / 2.0);
  const double band = dsp::band_power(avg, 500.0, 1000.0);
  MESSAGE("in-band fraction " << band / total);
  CHECK(band / total > 0.05);
}

TEST_CASE("every flexion annotation has band-power evidence nearby") {
  SynthConfig cfg;
  cfg.seed = 17;
  const auto rec = synth_recording(cfg);
  const auto spec = dsp::design_bandpass(rec.sample_rate_hz, 500, 1000, 4);
  const double fs = rec.sample_rate_hz;
  for (int c = 0; c < 2; ++c) {
    const auto y = dsp::filter_zero_phase(as_double(rec.channels[static_cast<std::size_t>(c)].samples), spec);
    const auto flex = flexion_times(rec, c);
    for (double t : flex) {
      const auto phase = *phase_at(rec, t);
      const auto [p0, p1] = phase_span(rec, phase);
      std::vector<double> quiet;
      for (double u = p0; u + 1.5 <= p1; u += 1.5)
        if (!near_any(u + 0.75, flex, 3.0)) quiet.push_back(mean_square(y, fs, u, u + 1.5));
      REQUIRE(quiet.size() > 10);
      std::nth_element(quiet.begin(), quiet.begin() + quiet.size() / 2, quiet.end());
      const double median = quiet[quiet.size() / 2];
      const double near = mean_square(y, fs, t - 0.75, t + 0.75);
      CHECK(10.0 * std::log10(near / median) >= 3.0);
    }
  }
}
