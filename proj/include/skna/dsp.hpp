#pragma once

#include <span>
#include <utility>
#include <vector>

namespace skna::dsp {

// Rational transfer function b(z)/a(z) with a[0] == 1.
struct FilterSpec {
  int order = 0;  // prototype order; band-pass has 2*order poles
  double low_cut_hz = 0.0;
  double high_cut_hz = 0.0;
  double sample_rate_hz = 0.0;
  std::vector<double> b;
  std::vector<double> a;
};

// Butterworth band-pass via the bilinear transform with pre-warped edges.
FilterSpec design_bandpass(double sample_rate_hz, double low_hz, double high_hz, int order);

// Complex response magnitude |H(e^{jw})| at frequency f.
double magnitude_response(const FilterSpec& spec, double freq_hz);

// Largest pole radius; < 1 for a stable filter.
double max_pole_radius(const FilterSpec& spec);

// Samples of edge extension used by filter_zero_phase.
std::size_t zero_phase_padding(const FilterSpec& spec);

// Forward-backward filtering with odd reflection padding and steady-state
// initial conditions. Output has the input's length and no phase shift.
std::vector<double> filter_zero_phase(std::span<const double> signal, const FilterSpec& spec);

// Single causal pass (direct form II transposed), zero initial state.
std::vector<double> filter_causal(std::span<const double> signal, const FilterSpec& spec);

inline constexpr int kSpectrogramWindow = 100;
inline constexpr int kSpectrogramHop = 50;
inline constexpr double kPowerFloor = 1e-12;

// Row-major [n_bins x n_frames] grid of 10*log10(max(power, floor)).
struct Spectrogram {
  int n_bins = 0;
  int n_frames = 0;
  std::vector<float> power_db;
  std::vector<double> freq_axis_hz;
  std::vector<double> time_axis_s;

  float at(int bin, int frame) const { return power_db[static_cast<std::size_t>(bin) * n_frames + frame]; }
};

// Linear |DFT|^2 of the Hann-windowed frames, same layout as Spectrogram.
std::vector<double> spectrogram_power(std::span<const double> segment);

Spectrogram spectrogram(std::span<const double> segment, double sample_rate_hz);

// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

struct Psd {
  std::vector<double> freq_axis_hz;
  std::vector<double> power_density;  // V^2/Hz
  double resolution_hz = 0.0;
};

// Averaged Hann-windowed periodograms, one-sided, density-scaled.
Psd welch_psd(std::span<const double> signal, double sample_rate_hz, std::size_t seg_len = 1000,
              double overlap = 0.5);

// Element-wise mean of PSDs sharing one frequency axis.
Psd average_psd(std::span<const Psd> psds);

// Sum of density * resolution over bins whose frequency lies in [lo, hi].
double band_power(const Psd& psd, double lo_hz, double hi_hz);

struct Band {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
  double width() const { return hi_hz - lo_hz; }
};

// Frequencies of the (1-fraction)/2 and (1+fraction)/2 quantiles of
// cumulative power within the search band, interpolated between bins.
Band energy_band(const Psd& psd, Band search = {500.0, 1000.0}, double fraction = 0.95);

struct SmirCurve {
  std::vector<double> freq_axis_hz;
  std::vector<double> smir_db;  // NaN where !valid
  std::vector<bool> valid;      // false where either power is zero

  // Mean over valid bins with frequency in [lo, hi].
  double mean_db(double lo_hz, double hi_hz) const;
};

SmirCurve smir(const Psd& signal, const Psd& noise, Band band = {500.0, 1000.0});

}  // namespace skna::dsp
