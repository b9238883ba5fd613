#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/core/error.hpp"

namespace ecgxai::signal {

/// Second-order section, a0 normalized to 1. First-order sections carry b2 = a2 = 0.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;

  std::complex<double> response(std::complex<double> z) const {
    const auto zi = 1.0 / z;
    return (b0 + b1 * zi + b2 * zi * zi) / (1.0 + a1 * zi + a2 * zi * zi);
  }
  /// Gain at DC.
  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
  bool first_order() const { return b2 == 0.0 && a2 == 0.0; }
};

using SosFilter = std::vector<Biquad>;

namespace detail {

enum class PassType { lowpass, highpass };

/// Digital Butterworth via bilinear transform with frequency prewarping.
inline SosFilter butterworth(int order, double cutoff_hz, double fs, PassType type) {
  require(order >= 1, "butterworth: order must be positive");
  require(cutoff_hz > 0 && cutoff_hz < fs / 2, "butterworth: cutoff must lie in (0, fs/2)");
  const double warped = 2.0 * fs * std::tan(std::numbers::pi * cutoff_hz / fs);
  const double k = 2.0 * fs;
  // Unit zeros of (1 -/+ z^-1) and the normalization point.
  const double zero_sign = type == PassType::highpass ? -1.0 : 1.0;
  const std::complex<double> norm_z = type == PassType::highpass ? -1.0 : 1.0;

  SosFilter sos;
  auto digital_pole = [&](int idx) {
    const double theta = std::numbers::pi * (2.0 * idx + order + 1) / (2.0 * order);
    const std::complex<double> proto = std::polar(1.0, theta);
    const std::complex<double> s = type == PassType::highpass ? warped / proto : warped * proto;
    return (k + s) / (k - s);
  };
  for (int idx = 0; idx < order / 2; ++idx) {
    const auto p = digital_pole(idx);
    Biquad q{1.0, 2.0 * zero_sign, 1.0, -2.0 * p.real(), std::norm(p)};
    const double g = std::abs(q.response(norm_z));
    q.b0 /= g;
    q.b1 /= g;
    q.b2 /= g;
    sos.push_back(q);
  }
  if (order % 2 == 1) {
    const auto p = digital_pole(order / 2);  // the real pole
    Biquad q{1.0, zero_sign, 0.0, -p.real(), 0.0};
    const double g = std::abs(q.response(norm_z));
    q.b0 /= g;
    q.b1 /= g;
    sos.push_back(q);
  }
  return sos;
}

}  // namespace detail

inline SosFilter butterworth_highpass(int order, double cutoff_hz, double fs) {
  return detail::butterworth(order, cutoff_hz, fs, detail::PassType::highpass);
}

inline SosFilter butterworth_lowpass(int order, double cutoff_hz, double fs) {
  return detail::butterworth(order, cutoff_hz, fs, detail::PassType::lowpass);
}

/// Second-order IIR notch at f0 with quality factor q (-3 dB width f0/q).
inline Biquad iir_notch(double f0_hz, double q, double fs) {
  require(f0_hz > 0 && f0_hz < fs / 2, "iir_notch: frequency must lie in (0, fs/2)");
  require(q > 0, "iir_notch: quality factor must be positive");
  const double w0 = 2.0 * std::numbers::pi * f0_hz / fs;
  const double beta = std::tan(w0 / q / 2.0);
  const double gain = 1.0 / (1.0 + beta);
  const double c = -2.0 * std::cos(w0);
  return Biquad{gain, gain * c, gain, gain * c, 2.0 * gain - 1.0};
}

inline double magnitude_response(const SosFilter& sos, double f_hz, double fs) {
  const std::complex<double> z = std::polar(1.0, 2.0 * std::numbers::pi * f_hz / fs);
  std::complex<double> h = 1.0;
  for (const auto& q : sos) h *= q.response(z);
  return std::abs(h);
}

/// Transposed direct-form II states for each section, two per section.
using SosState = std::vector<std::array<double, 2>>;

/// States for which a constant input of 1 is already at steady state.
inline SosState steady_state(const SosFilter& sos) {
  SosState zi(sos.size());
  double u = 1.0;
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto& q = sos[s];
    const double y = q.dc_gain() * u;
    zi[s][1] = q.b2 * u - q.a2 * y;
    zi[s][0] = q.b1 * u - q.a1 * y + zi[s][1];
    u = y;
  }
  return zi;
}

/// Causal filtering; `state`, scaled by `state_scale`, seeds the sections.
inline std::vector<double> sosfilt(const SosFilter& sos, std::span<const double> x, const SosState* state = nullptr,
                                   double state_scale = 0.0) {
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto& q = sos[s];
    double z1 = state ? (*state)[s][0] * state_scale : 0.0;
    double z2 = state ? (*state)[s][1] * state_scale : 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      v = out;
    }
    if (state) state_scale *= q.dc_gain();
  }
  return y;
}

/// Zero-phase forward-backward filtering with odd-extension edge padding and
/// steady-state initial conditions (the scheme of scipy's sosfiltfilt).
inline std::vector<double> sosfiltfilt(const SosFilter& sos, std::span<const double> x) {
  std::size_t ntaps = 2 * sos.size() + 1;
  const auto first_order = static_cast<std::size_t>(std::count_if(sos.begin(), sos.end(), [](const Biquad& q) {
    return q.first_order();
  }));
  ntaps -= first_order;
  const std::size_t pad = 3 * ntaps;
  if (x.size() <= pad)
    throw InvalidInputError("sosfiltfilt: signal of " + std::to_string(x.size()) + " samples shorter than the " +
                            std::to_string(pad + 1) + "-sample filter warm-up");
  const std::size_t n = x.size();
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const SosState zi = steady_state(sos);
  std::vector<double> fwd = sosfilt(sos, ext, &zi, ext.front());
  std::reverse(fwd.begin(), fwd.end());
  std::vector<double> bwd = sosfilt(sos, fwd, &zi, fwd.front());
  std::reverse(bwd.begin(), bwd.end());
  return std::vector<double>(bwd.begin() + static_cast<std::ptrdiff_t>(pad),
                             bwd.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

}  // namespace ecgxai::signal
