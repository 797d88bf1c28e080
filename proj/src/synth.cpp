#include "skna/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "skna/dsp.hpp"
#include "skna/error.hpp"
#include "skna/seed.hpp"

namespace skna {

namespace {

constexpr int kStill = 0;
constexpr int kMoving = 1;
constexpr double kQrsSigmaS = 0.002;
constexpr double kLeadGain[2] = {1.0, 0.8};

std::vector<double> tukey(std::size_t n, double alpha) {
  std::vector<double> w(n, 1.0);
  if (n < 2 || alpha <= 0.0) return w;
  const double edge = alpha * static_cast<double>(n - 1) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i);
    const double d = std::min(x, static_cast<double>(n - 1) - x);
    if (d < edge) w[i] = 0.5 * (1.0 - std::cos(std::numbers::pi * d / edge));
  }
  return w;
}

void scale_to_rms(std::vector<double>& x, double rms) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double current = std::sqrt(ss / static_cast<double>(x.size()));
  const double k = current > 0.0 ? rms / current : 0.0;
  for (double& v : x) v *= k;
}

void add_at(std::vector<double>& dst, std::ptrdiff_t offset, const std::vector<double>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto j = offset + static_cast<std::ptrdiff_t>(i);
    if (j >= 0 && j < static_cast<std::ptrdiff_t>(dst.size())) dst[static_cast<std::size_t>(j)] += src[i];
  }
}

std::mt19937_64 stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, name, index));
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(sample_rate_hz >= kMinSampleRateHz)) fail("sample rate must be >= 2000 Hz");
  for (int p = 0; p < kPhaseCount; ++p) {
    if (!(phase_duration_s[p] > 0.0)) fail(std::string("phase duration must be positive: ") + to_string(static_cast<Phase>(p)));
    if (flexion_count[p] < 0) fail("flexion count must be >= 0");
    if (flexion_count[p] > 0 && phase_duration_s[p] / flexion_count[p] < 2.0) {
      fail("flexions must be at least 2 s apart on average");
    }
  }
  if (!(skna_burst_rate_hz > 0.0) || !(ecg_rate_bpm > 0.0)) fail("rates must be positive");
  if (skna_burst_gain < 0.0 || emg_gain < 0.0 || ecg_amplitude < 0.0 || baseline_noise_rms < 0.0) {
    fail("gains must be non-negative");
  }
  if (!(emg_spectral_tilt >= 0.0 && emg_spectral_tilt < 1.0)) fail("EMG tilt must lie in [0, 1)");
  if (!(skna_band_lo_hz > 0.0 && skna_band_lo_hz < skna_band_hi_hz && skna_band_hi_hz < sample_rate_hz / 2.0)) {
    fail("SKNA band must satisfy 0 < lo < hi < fs/2");
  }
  if (!(skna_burst_min_s > 0.0 && skna_burst_min_s <= skna_burst_max_s)) fail("bad SKNA burst duration range");
  if (!(flex_duration_s > 0.0) || annotation_jitter_s < 0.0) fail("bad flexion timing");
}

double SynthConfig::total_duration_s() const {
  double t = 0.0;
  for (double d : phase_duration_s) t += d;
  return t;
}

Recording synth_recording(const SynthConfig& cfg) {
  cfg.validate();
  const double fs = cfg.sample_rate_hz;
  const double total = cfg.total_duration_s();
  const auto n = static_cast<std::size_t>(std::llround(total * fs));
  auto to_index = [fs](double t) { return static_cast<std::ptrdiff_t>(std::llround(t * fs)); };

  std::vector<double> data[2] = {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  std::vector<AnnotationEvent> events;

  std::array<double, kPhaseCount> start{};
  for (int p = 1; p < kPhaseCount; ++p) start[p] = start[p - 1] + cfg.phase_duration_s[p - 1];
  for (int p = 0; p < kPhaseCount; ++p) events.push_back(AnnotationEvent::phase_start(start[p], static_cast<Phase>(p)));

  // Amplifier noise.
  for (int c = 0; c < 2; ++c) {
    auto rng = stream(cfg.seed, "noise", c);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& v : data[c]) v = cfg.baseline_noise_rms * gauss(rng);
  }

  // Periodic QRS-like spikes.
  {
    auto rng = stream(cfg.seed, "ecg");
    const double period = 60.0 / cfg.ecg_rate_bpm;
    const double first = std::uniform_real_distribution<double>(0.0, period)(rng);
    const auto half_width = static_cast<std::ptrdiff_t>(std::ceil(6.0 * kQrsSigmaS * fs));
    for (double beat = first; beat < total; beat += period) {
      const auto centre = to_index(beat);
      for (auto i = centre - half_width; i <= centre + half_width; ++i) {
        if (i < 0 || i >= static_cast<std::ptrdiff_t>(n)) continue;
        const double dt = static_cast<double>(i) / fs - beat;
        const double pulse = cfg.ecg_amplitude * std::exp(-0.5 * dt * dt / (kQrsSigmaS * kQrsSigmaS));
        for (int c = 0; c < 2; ++c) data[c][static_cast<std::size_t>(i)] += kLeadGain[c] * pulse;
      }
    }
  }

  // Sympathetic bursts in the Stroop phases, seen on both leads.
  if (cfg.skna_burst_gain > 0.0) {
    const auto band = dsp::design_bandpass(fs, cfg.skna_band_lo_hz, cfg.skna_band_hi_hz, 1);
    const std::size_t pad = 4 * static_cast<std::size_t>(fs / cfg.skna_band_lo_hz);
    auto rng = stream(cfg.seed, "skna");
    std::exponential_distribution<double> gap(cfg.skna_burst_rate_hz);
    std::uniform_real_distribution<double> length(cfg.skna_burst_min_s, cfg.skna_burst_max_s);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Phase p : {Phase::Stroop1, Phase::Stroop2}) {
      const double lo = start[static_cast<int>(p)];
      const double hi = lo + cfg.phase_duration_s[static_cast<int>(p)];
      for (double t = lo + gap(rng); t < hi; t += gap(rng)) {
        const double dur = std::min(length(rng), hi - t);
        const auto len = static_cast<std::size_t>(std::llround(dur * fs));
        if (len < 2) continue;
        const auto envelope = tukey(len, 0.5);
        for (int c = 0; c < 2; ++c) {
          std::vector<double> white(len + 2 * pad);
          for (auto& v : white) v = gauss(rng);
          const auto shaped = dsp::filter_zero_phase(white, band);
          std::vector<double> burst(shaped.begin() + static_cast<std::ptrdiff_t>(pad),
                                    shaped.begin() + static_cast<std::ptrdiff_t>(pad + len));
          scale_to_rms(burst, cfg.skna_burst_gain);
          for (std::size_t i = 0; i < len; ++i) burst[i] *= envelope[i];
          add_at(data[c], to_index(t), burst);
        }
      }
    }
  }

  // Flexions on the moving lead: annotation plus a jittered EMG contraction.
  {
    auto rng = stream(cfg.seed, "flexion");
    std::uniform_real_distribution<double> place(0.25, 0.75);
    std::uniform_real_distribution<double> jitter(-cfg.annotation_jitter_s, cfg.annotation_jitter_s);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto warmup = static_cast<std::size_t>(std::ceil(20.0 / (1.0 - cfg.emg_spectral_tilt)));
    const auto len = static_cast<std::size_t>(std::llround(cfg.flex_duration_s * fs));
    const auto envelope = tukey(len, 0.2);
    for (int p = 0; p < kPhaseCount; ++p) {
      const int count = cfg.flexion_count[p];
      const double slot = cfg.phase_duration_s[p] / std::max(count, 1);
      for (int i = 0; i < count; ++i) {
        const double t_annot = start[p] + slot * (i + place(rng));
        events.push_back(AnnotationEvent::flexion(t_annot, kMoving));
        const double centre = t_annot + cfg.annotation_lead_s + jitter(rng);

        std::vector<double> emg(len);
        double y = 0.0;
        for (std::size_t k = 0; k < warmup + len; ++k) {
          y = cfg.emg_spectral_tilt * y + (1.0 - cfg.emg_spectral_tilt) * gauss(rng);
          if (k >= warmup) emg[k - warmup] = y;
        }
        double mean = 0.0;
        for (double v : emg) mean += v;
        mean /= static_cast<double>(len);
        for (double& v : emg) v -= mean;
        scale_to_rms(emg, cfg.emg_gain);
        for (std::size_t k = 0; k < len; ++k) emg[k] *= envelope[k];
        add_at(data[kMoving], to_index(centre - cfg.flex_duration_s / 2.0), emg);
      }
    }
  }

  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.time_s < b.time_s; });

  Recording rec;
  rec.subject_id = cfg.subject_id;
  rec.sample_rate_hz = fs;
  rec.duration_s = total;
  rec.annotations = std::move(events);
  const char* names[2] = {"still", "moving"};
  for (int c = 0; c < 2; ++c) {
    Channel ch{names[c], std::vector<float>(n)};
    std::transform(data[c].begin(), data[c].end(), ch.samples.begin(),
                   [](double v) { return static_cast<float>(v); });
    rec.channels.push_back(std::move(ch));
  }
  rec.validate();
  return rec;
}

SynthConfig subject_config(const SynthConfig& base, int subject_index, std::uint64_t corpus_seed) {
  SynthConfig cfg = base;
  char id[16];
  std::snprintf(id, sizeof id, "S%02d", subject_index + 1);
  cfg.subject_id = id;
  cfg.seed = derive_seed(corpus_seed, "subject", static_cast<std::uint64_t>(subject_index));
  return cfg;
}

}  // namespace skna
