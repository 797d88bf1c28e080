#pragma once

// Independent reference computations used only by the tests. Nothing here
// shares code with the library paths they check.

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

namespace oracle {

// Direct O(N^2) DFT power |X_k|^2, k = 0..N/2, of a Hann-windowed frame.
inline std::vector<double> hann_dft_power(std::span<const double> frame) {
  const std::size_t n = frame.size();
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    long double re = 0.0L, im = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      const long double w = 0.5L - 0.5L * std::cos(2.0L * std::numbers::pi_v<long double> * i / n);
      const long double ang = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(k * i % n) / n;
      re += w * frame[i] * std::cos(ang);
      im += w * frame[i] * std::sin(ang);
    }
    out[k] = static_cast<double>(re * re + im * im);
  }
  return out;
}

// |H(f)| from the DFT of an impulse response at frequency f.
inline double impulse_response_gain(std::span<const double> impulse_response, double f, double fs) {
  std::complex<long double> acc = 0.0L;
  for (std::size_t n = 0; n < impulse_response.size(); ++n) {
    const long double ang = -2.0L * std::numbers::pi_v<long double> * f * static_cast<long double>(n) / fs;
    acc += static_cast<long double>(impulse_response[n]) * std::polar(1.0L, ang);
  }
  return static_cast<double>(std::abs(acc));
}

// Scalar weighted cross-entropy straight from the definition.
inline double weighted_ce(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels,
                          const std::vector<double>& weights) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double z = 0.0;
    for (double v : logits[i]) z += std::exp(v);
    const double p = std::exp(logits[i][static_cast<std::size_t>(labels[i])]) / z;
    num += weights[static_cast<std::size_t>(labels[i])] * -std::log(p);
    den += weights[static_cast<std::size_t>(labels[i])];
  }
  return num / den;
}

// Plain Adam on a scalar objective with gradient g(x).
template <typename Grad>
inline std::vector<double> scalar_adam(double x, double lr, int steps, Grad grad) {
  double m = 0.0, v = 0.0;
  std::vector<double> path{x};
  for (int t = 1; t <= steps; ++t) {
    const double g = grad(x);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
    path.push_back(x);
  }
  return path;
}

}  // namespace oracle
