#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ecgxai/signal/filters.hpp"
#include "ecgxai/signal/types.hpp"

namespace ecgxai::signal {

struct PeakDetectorConfig {
  double band_low_hz = 5.0;
  double band_high_hz = 15.0;
  double integration_s = 0.150;
  double refractory_s = 0.200;
  double t_wave_s = 0.360;
  double skip_initial_s = 0.5;
  double refine_s = 0.150;  // half-width of the R-peak refinement window
  double learning_s = 2.0;
};

namespace detail {

/// Intermediate traces of the detector, exposed for inspection in tests.
struct PanTompkinsTrace {
  std::vector<double> bandpassed;
  std::vector<double> slope;
  std::vector<double> integrated;
};

inline PanTompkinsTrace pan_tompkins_trace(const std::vector<double>& x, double fs, const PeakDetectorConfig& cfg) {
  PanTompkinsTrace tr;
  SosFilter band = butterworth_highpass(2, cfg.band_low_hz, fs);
  for (const auto& q : butterworth_lowpass(2, cfg.band_high_hz, fs)) band.push_back(q);
  tr.bandpassed = sosfiltfilt(band, x);

  const std::size_t n = x.size();
  const auto& b = tr.bandpassed;
  tr.slope.assign(n, 0.0);
  for (std::size_t i = 2; i + 2 < n; ++i) tr.slope[i] = (2 * b[i + 2] + b[i + 1] - b[i - 1] - 2 * b[i - 2]) * fs / 8.0;

  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + tr.slope[i] * tr.slope[i];
  const auto half = static_cast<std::size_t>(std::lround(cfg.integration_s * fs / 2));
  tr.integrated.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    tr.integrated[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(2 * half + 1);
  }
  return tr;
}

inline double max_abs_in(const std::vector<double>& v, std::size_t center, std::size_t half) {
  const std::size_t lo = center >= half ? center - half : 0;
  const std::size_t hi = std::min(v.size(), center + half + 1);
  double m = 0;
  for (std::size_t i = lo; i < hi; ++i) m = std::max(m, std::abs(v[i]));
  return m;
}

}  // namespace detail

/// Pan-Tompkins QRS detection on a cleaned signal. Candidate peaks of the
/// integrated slope energy are classified with adaptive signal/noise levels,
/// with search-back over long gaps, refractory suppression and a T-wave slope
/// test, then snapped to the local maximum of the cleaned signal.
inline CleanedSignal detect_r_peaks(CleanedSignal cleaned, const PeakDetectorConfig& cfg = {}) {
  cleaned.r_peaks.clear();
  const auto& x = cleaned.samples;
  const double fs = cleaned.sample_rate_hz;
  const std::size_t n = x.size();
  const auto skip = static_cast<std::size_t>(std::lround(cfg.skip_initial_s * fs));
  const auto refractory = static_cast<std::size_t>(std::lround(cfg.refractory_s * fs));
  const auto t_wave = static_cast<std::size_t>(std::lround(cfg.t_wave_s * fs));
  const auto refine = static_cast<std::size_t>(std::lround(cfg.refine_s * fs / 2));
  const auto slope_half = static_cast<std::size_t>(std::lround(0.04 * fs));
  if (n <= skip + 2) return cleaned;

  const auto tr = detail::pan_tompkins_trace(x, fs, cfg);
  const auto& mwi = tr.integrated;

  std::vector<std::size_t> candidates;
  for (std::size_t i = std::max<std::size_t>(skip, 1); i + 1 < n; ++i)
    if (mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1]) candidates.push_back(i);
  if (candidates.empty()) return cleaned;

  const std::size_t learn_end = std::min(n, skip + static_cast<std::size_t>(cfg.learning_s * fs));
  double learn_max = 0, learn_mean = 0;
  for (std::size_t i = skip; i < learn_end; ++i) {
    learn_max = std::max(learn_max, mwi[i]);
    learn_mean += mwi[i];
  }
  learn_mean /= static_cast<double>(learn_end - skip);
  if (!(learn_max > 0)) {
    for (std::size_t i = skip; i < n; ++i) learn_max = std::max(learn_max, mwi[i]);
    if (!(learn_max > 0)) return cleaned;
  }
  double spki = learn_max / 3.0;
  double npki = learn_mean / 2.0;
  auto threshold = [&] { return npki + 0.25 * (spki - npki); };

  std::vector<std::size_t> beats;  // indices into mwi
  std::vector<std::size_t> rr;     // recent intervals
  auto rr_mean = [&] {
    if (rr.empty()) return 0.0;
    const std::size_t k = std::min<std::size_t>(rr.size(), 8);
    double s = 0;
    for (std::size_t i = rr.size() - k; i < rr.size(); ++i) s += static_cast<double>(rr[i]);
    return s / static_cast<double>(k);
  };
  auto accept = [&](std::size_t c, double weight) {
    if (!beats.empty()) rr.push_back(c - beats.back());
    beats.push_back(c);
    spki = weight * mwi[c] + (1 - weight) * spki;
  };

  std::size_t ci = 0;
  for (; ci < candidates.size(); ++ci) {
    const std::size_t c = candidates[ci];
    // Search back for a missed beat across an unusually long gap.
    if (!beats.empty() && rr.size() >= 2 && c - beats.back() > 1.66 * rr_mean()) {
      const double thr2 = 0.5 * threshold();
      std::size_t best = 0;
      double best_v = thr2;
      for (std::size_t j = 0; j < ci; ++j) {
        const std::size_t k = candidates[j];
        if (k <= beats.back() + refractory || k + refractory >= c) continue;
        if (mwi[k] > best_v) {
          best_v = mwi[k];
          best = k;
        }
      }
      if (best != 0) accept(best, 0.25);
    }
    if (mwi[c] <= threshold()) {
      npki = 0.125 * mwi[c] + 0.875 * npki;
      continue;
    }
    if (!beats.empty() && c - beats.back() < refractory) {
      if (mwi[c] > mwi[beats.back()]) {
        beats.back() = c;
        if (!rr.empty()) rr.back() = beats.size() >= 2 ? c - beats[beats.size() - 2] : rr.back();
        spki = 0.125 * mwi[c] + 0.875 * spki;
      }
      continue;
    }
    if (!beats.empty() && c - beats.back() < t_wave) {
      const double s_new = detail::max_abs_in(tr.slope, c, slope_half);
      const double s_prev = detail::max_abs_in(tr.slope, beats.back(), slope_half);
      if (s_new < 0.5 * s_prev) {
        npki = 0.125 * mwi[c] + 0.875 * npki;
        continue;
      }
    }
    accept(c, 0.125);
  }

  // Snap to the R-peak of the cleaned signal.
  std::vector<std::size_t> peaks;
  for (std::size_t c : beats) {
    const std::size_t lo = c >= refine ? c - refine : 0;
    const std::size_t hi = std::min(n, c + refine + 1);
    std::size_t best = lo;
    for (std::size_t i = lo; i < hi; ++i)
      if (x[i] > x[best]) best = i;
    if (best < skip) continue;
    if (!peaks.empty() && best <= peaks.back()) continue;
    if (!peaks.empty() && best - peaks.back() < refractory) {
      if (x[best] > x[peaks.back()]) peaks.back() = best;
      continue;
    }
    peaks.push_back(best);
  }
  cleaned.r_peaks = std::move(peaks);
  return cleaned;
}

}  // namespace ecgxai::signal
