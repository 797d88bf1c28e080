#include "skna/dsp.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>

#include "skna/error.hpp"

namespace skna::dsp {

namespace {

using cd = std::complex<double>;

std::vector<double> poly_from_roots(const std::vector<cd>& roots) {
  std::vector<cd> c{1.0};
  for (const auto& r : roots) {
    std::vector<cd> next(c.size() + 1, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i] += c[i];
      next[i + 1] -= c[i] * r;
    }
    c = std::move(next);
  }
  std::vector<double> out(c.size());
  std::transform(c.begin(), c.end(), out.begin(), [](cd v) { return v.real(); });
  return out;
}

// FFTW planning is not thread-safe; execution with new-array calls is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }

  // |X_k|^2 for k = 0..n/2 written into power.
  void power(std::span<double> power) {
    fftw_execute(plan_);
    for (std::size_t k = 0; k <= n_ / 2; ++k) {
      power[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace

FilterSpec design_bandpass(double sample_rate_hz, double low_hz, double high_hz, int order) {
  if (order < 1) throw Error(ErrorCode::InvalidBand, "filter order must be >= 1");
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate_hz / 2.0)) {
    throw Error(ErrorCode::InvalidBand, "band-pass edges must satisfy 0 < low < high < fs/2");
  }
  const double fs2 = 2.0 * sample_rate_hz;
  const double wl = fs2 * std::tan(std::numbers::pi * low_hz / sample_rate_hz);
  const double wh = fs2 * std::tan(std::numbers::pi * high_hz / sample_rate_hz);
  const double bw = wh - wl;
  const double w0 = std::sqrt(wl * wh);

  std::vector<cd> poles;
  for (int k = 1; k <= order; ++k) {
    const cd p = std::polar(1.0, std::numbers::pi * (2.0 * k + order - 1) / (2.0 * order));
    const cd half = p * bw / 2.0;
    const cd disc = std::sqrt(half * half - w0 * w0);
    poles.push_back(half + disc);
    poles.push_back(half - disc);
  }
  // Analog zeros: `order` at the origin; the rest map to z = -1.
  cd num = std::pow(cd(fs2), order);
  cd den = 1.0;
  std::vector<cd> zd, pd;
  for (int i = 0; i < order; ++i) zd.push_back(1.0);
  for (int i = 0; i < order; ++i) zd.push_back(-1.0);
  for (const auto& p : poles) {
    pd.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  const double gain = std::pow(bw, order) * (num / den).real();

  FilterSpec spec;
  spec.order = order;
  spec.low_cut_hz = low_hz;
  spec.high_cut_hz = high_hz;
  spec.sample_rate_hz = sample_rate_hz;
  spec.b = poly_from_roots(zd);
  for (auto& v : spec.b) v *= gain;
  spec.a = poly_from_roots(pd);
  return spec;
}

double magnitude_response(const FilterSpec& spec, double freq_hz) {
  const double w = 2.0 * std::numbers::pi * freq_hz / spec.sample_rate_hz;
  const cd z_inv = std::polar(1.0, -w);
  auto eval = [&](const std::vector<double>& c) {
    cd acc = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * z_inv + *it;
    return acc;
  };
  return std::abs(eval(spec.b) / eval(spec.a));
}

double max_pole_radius(const FilterSpec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.a.size()) - 1;
  if (n < 1) return 0.0;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) companion(0, j) = -spec.a[static_cast<std::size_t>(j + 1)] / spec.a[0];
  for (Eigen::Index i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  return companion.eigenvalues().cwiseAbs().maxCoeff();
}

std::size_t zero_phase_padding(const FilterSpec& spec) {
  return 3 * std::max(spec.a.size(), spec.b.size());
}

std::vector<double> filter_causal(std::span<const double> signal, const FilterSpec& spec) {
  const std::size_t n = spec.a.size();
  std::vector<double> z(n, 0.0);
  std::vector<double> y(signal.size());
  for (std::size_t t = 0; t < signal.size(); ++t) {
    const double x = signal[t];
    const double out = spec.b[0] * x + z[0];
    for (std::size_t i = 0; i + 2 < n; ++i) z[i] = spec.b[i + 1] * x + z[i + 1] - spec.a[i + 1] * out;
    z[n - 2] = spec.b[n - 1] * x - spec.a[n - 1] * out;
    y[t] = out;
  }
  return y;
}

namespace {

// Steady-state state vector for a unit step input.
std::vector<double> step_initial_state(const FilterSpec& spec) {
  const auto m = static_cast<Eigen::Index>(spec.a.size()) - 1;
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd rhs(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    lhs(i, 0) += spec.a[static_cast<std::size_t>(i + 1)];
    if (i + 1 < m) lhs(i, i + 1) -= 1.0;
    rhs(i) = spec.b[static_cast<std::size_t>(i + 1)] - spec.a[static_cast<std::size_t>(i + 1)] * spec.b[0];
  }
  const Eigen::VectorXd zi = lhs.partialPivLu().solve(rhs);
  return {zi.data(), zi.data() + m};
}

void run_filter(std::vector<double>& x, const FilterSpec& spec, const std::vector<double>& zi) {
  const std::size_t n = spec.a.size();
  std::vector<double> z(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) z[i] = zi[i] * x.front();
  for (auto& sample : x) {
    const double in = sample;
    const double out = spec.b[0] * in + z[0];
    for (std::size_t i = 0; i + 2 < n; ++i) z[i] = spec.b[i + 1] * in + z[i + 1] - spec.a[i + 1] * out;
    z[n - 2] = spec.b[n - 1] * in - spec.a[n - 1] * out;
    sample = out;
  }
}

}  // namespace

std::vector<double> filter_zero_phase(std::span<const double> signal, const FilterSpec& spec) {
  const std::size_t pad = zero_phase_padding(spec);
  const std::size_t n = signal.size();
  if (n <= pad) {
    throw Error(ErrorCode::Length, "signal of " + std::to_string(n) +
                                       " samples is too short for zero-phase filtering (needs > " +
                                       std::to_string(pad) + ")");
  }
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * signal[0] - signal[i]);
  ext.insert(ext.end(), signal.begin(), signal.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * signal[n - 1] - signal[n - 1 - i]);

  const auto zi = step_initial_state(spec);
  run_filter(ext, spec, zi);
  std::reverse(ext.begin(), ext.end());
  run_filter(ext, spec, zi);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

std::vector<double> spectrogram_power(std::span<const double> segment) {
  constexpr std::size_t win = kSpectrogramWindow;
  constexpr std::size_t hop = kSpectrogramHop;
  constexpr std::size_t bins = win / 2 + 1;
  if (segment.size() < win) {
    throw Error(ErrorCode::Length, "segment shorter than the spectrogram window");
  }
  const std::size_t frames = (segment.size() - win) / hop + 1;
  const auto window = hann_window(win);

  RealFft fft(win);
  std::vector<double> column(bins);
  std::vector<double> power(bins * frames);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < win; ++i) fft.input()[i] = window[i] * segment[f * hop + i];
    fft.power(column);
    for (std::size_t k = 0; k < bins; ++k) power[k * frames + f] = column[k];
  }
  return power;
}

Spectrogram spectrogram(std::span<const double> segment, double sample_rate_hz) {
  const auto power = spectrogram_power(segment);
  Spectrogram s;
  s.n_bins = kSpectrogramWindow / 2 + 1;
  s.n_frames = static_cast<int>(power.size()) / s.n_bins;
  s.power_db.resize(power.size());
  std::transform(power.begin(), power.end(), s.power_db.begin(), [](double p) {
    return static_cast<float>(10.0 * std::log10(std::max(p, kPowerFloor)));
  });
  for (int k = 0; k < s.n_bins; ++k) s.freq_axis_hz.push_back(k * sample_rate_hz / kSpectrogramWindow);
  for (int f = 0; f < s.n_frames; ++f) {
    s.time_axis_s.push_back((f * kSpectrogramHop + kSpectrogramWindow / 2.0) / sample_rate_hz);
  }
  return s;
}

Psd welch_psd(std::span<const double> signal, double sample_rate_hz, std::size_t seg_len,
              double overlap) {
  if (seg_len < 2) throw Error(ErrorCode::Length, "Welch segment must have at least 2 samples");
  if (!(overlap >= 0.0 && overlap < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "Welch overlap must lie in [0, 1)");
  }
  if (signal.size() < seg_len) throw Error(ErrorCode::Length, "signal shorter than Welch segment");

  const auto window = hann_window(seg_len);
  const double window_energy = std::inner_product(window.begin(), window.end(), window.begin(), 0.0);
  const std::size_t step = seg_len - static_cast<std::size_t>(std::floor(seg_len * overlap));
  const std::size_t bins = seg_len / 2 + 1;

  RealFft fft(seg_len);
  std::vector<double> column(bins);
  std::vector<double> acc(bins, 0.0);
  std::size_t count = 0;
  for (std::size_t start = 0; start + seg_len <= signal.size(); start += step, ++count) {
    for (std::size_t i = 0; i < seg_len; ++i) fft.input()[i] = window[i] * signal[start + i];
    fft.power(column);
    for (std::size_t k = 0; k < bins; ++k) acc[k] += column[k];
  }

  Psd psd;
  psd.resolution_hz = sample_rate_hz / static_cast<double>(seg_len);
  psd.freq_axis_hz.resize(bins);
  psd.power_density.resize(bins);
  const double scale = 1.0 / (sample_rate_hz * window_energy * static_cast<double>(count));
  for (std::size_t k = 0; k < bins; ++k) {
    psd.freq_axis_hz[k] = static_cast<double>(k) * psd.resolution_hz;
    const bool edge = k == 0 || (seg_len % 2 == 0 && k == bins - 1);
    psd.power_density[k] = acc[k] * scale * (edge ? 1.0 : 2.0);
  }
  return psd;
}

Psd average_psd(std::span<const Psd> psds) {
  if (psds.empty()) throw Error(ErrorCode::Length, "no PSDs to average");
  Psd out = psds.front();
  for (std::size_t i = 1; i < psds.size(); ++i) {
    if (psds[i].freq_axis_hz != out.freq_axis_hz) {
      throw Error(ErrorCode::Shape, "PSD frequency axes differ");
    }
    for (std::size_t k = 0; k < out.power_density.size(); ++k) {
      out.power_density[k] += psds[i].power_density[k];
    }
  }
  for (auto& v : out.power_density) v /= static_cast<double>(psds.size());
  return out;
}

double band_power(const Psd& psd, double lo_hz, double hi_hz) {
  double total = 0.0;
  for (std::size_t k = 0; k < psd.freq_axis_hz.size(); ++k) {
    const double f = psd.freq_axis_hz[k];
    if (f >= lo_hz && f <= hi_hz) total += psd.power_density[k] * psd.resolution_hz;
  }
  return total;
}

Band energy_band(const Psd& psd, Band search, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "energy fraction must lie in (0, 1)");
  }
  if (psd.freq_axis_hz.empty() || psd.freq_axis_hz.front() > search.lo_hz ||
      psd.freq_axis_hz.back() < search.hi_hz) {
    throw Error(ErrorCode::InvalidBand, "PSD does not cover the search band");
  }
  std::vector<double> freqs;
  std::vector<double> cumulative;
  double total = 0.0;
  for (std::size_t k = 0; k < psd.freq_axis_hz.size(); ++k) {
    const double f = psd.freq_axis_hz[k];
    if (f < search.lo_hz || f > search.hi_hz) continue;
    total += psd.power_density[k];
    freqs.push_back(f);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw Error(ErrorCode::UndefinedBand, "no power in the search band");
  for (auto& c : cumulative) c /= total;

  auto quantile = [&](double q) {
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), q);
    const auto j = static_cast<std::size_t>(it - cumulative.begin());
    if (j == 0) return freqs.front();
    if (j >= freqs.size()) return freqs.back();
    const double c0 = cumulative[j - 1];
    const double c1 = cumulative[j];
    const double t = (q - c0) / (c1 - c0);
    return freqs[j - 1] + t * (freqs[j] - freqs[j - 1]);
  };
  const double tail = (1.0 - fraction) / 2.0;
  return {quantile(tail), quantile(1.0 - tail)};
}

double SmirCurve::mean_db(double lo_hz, double hi_hz) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < freq_axis_hz.size(); ++k) {
    if (valid[k] && freq_axis_hz[k] >= lo_hz && freq_axis_hz[k] <= hi_hz) {
      sum += smir_db[k];
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

SmirCurve smir(const Psd& signal, const Psd& noise, Band band) {
  if (signal.freq_axis_hz != noise.freq_axis_hz ||
      signal.power_density.size() != noise.power_density.size()) {
    throw Error(ErrorCode::Shape, "SMIR needs PSDs on identical frequency axes");
  }
  SmirCurve out;
  for (std::size_t k = 0; k < signal.freq_axis_hz.size(); ++k) {
    const double f = signal.freq_axis_hz[k];
    if (f < band.lo_hz || f > band.hi_hz) continue;
    const double s = signal.power_density[k];
    const double n = noise.power_density[k];
    const bool ok = s > 0.0 && n > 0.0;
    out.freq_axis_hz.push_back(f);
    out.valid.push_back(ok);
    out.smir_db.push_back(ok ? 10.0 * std::log10(s / n) : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

}  // namespace skna::dsp
