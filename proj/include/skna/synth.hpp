#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "skna/recording.hpp"

namespace skna {

// Parameters of the synthetic two-channel protocol recording. Amplitudes are
// in volts (RMS unless noted). Channel 0 stays still; channel 1 carries every
// flexion.
struct SynthConfig {
  std::string subject_id = "S01";
  double sample_rate_hz = 10000.0;
  std::array<double, kPhaseCount> phase_duration_s = {120.0, 300.0, 120.0, 300.0, 120.0};
  std::array<int, kPhaseCount> flexion_count = {0, 30, 0, 30, 10};

  // Stress bursts: Poisson arrivals during Stroop phases only.
  double skna_burst_rate_hz = 3.0;
  double skna_band_lo_hz = 500.0;
  double skna_band_hi_hz = 1000.0;
  double skna_burst_gain = 20e-6;
  double skna_burst_min_s = 0.05;
  double skna_burst_max_s = 0.3;

  // Muscle noise: white noise through y[n] = tilt*y[n-1] + (1-tilt)*x[n].
  double emg_gain = 120e-6;
  double emg_spectral_tilt = 0.9;
  double flex_duration_s = 1.75;
  // Contraction midpoint = annotation + lead + U(-jitter, +jitter).
  double annotation_lead_s = 0.25;
  double annotation_jitter_s = 0.5;

  double ecg_rate_bpm = 70.0;
  double ecg_amplitude = 0.5e-3;  // peak
  double baseline_noise_rms = 1e-6;

  std::uint64_t seed = 1;

  // Throws Error(InvalidConfig).
  void validate() const;
  double total_duration_s() const;
};

Recording synth_recording(const SynthConfig& cfg);

// Per-subject config for a corpus: subject ids S01.., seeds derived from the
// corpus seed.
SynthConfig subject_config(const SynthConfig& base, int subject_index, std::uint64_t corpus_seed);

}  // namespace skna
