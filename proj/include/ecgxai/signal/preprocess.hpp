#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ecgxai/signal/filters.hpp"
#include "ecgxai/signal/peaks.hpp"
#include "ecgxai/signal/segments.hpp"
#include "ecgxai/signal/types.hpp"

namespace ecgxai::signal {

inline constexpr double kHighpassHz = 0.5;
inline constexpr int kHighpassOrder = 5;
inline constexpr double kNotchQ = 30.0;

inline SosFilter cleaning_filter(double powerline_hz, double fs) {
  require(powerline_hz == 50.0 || powerline_hz == 60.0, "clean_signal: powerline_hz must be 50 or 60");
  SosFilter sos = butterworth_highpass(kHighpassOrder, kHighpassHz, fs);
  sos.push_back(iir_notch(powerline_hz, kNotchQ, fs));
  return sos;
}

/// High-pass baseline removal followed by a powerline notch, both zero-phase.
inline CleanedSignal clean_signal(const EcgRecording& raw, double powerline_hz = 50.0) {
  raw.validate();
  CleanedSignal out;
  out.sample_rate_hz = raw.sample_rate_hz;
  out.samples = sosfiltfilt(cleaning_filter(powerline_hz, raw.sample_rate_hz), raw.samples);
  return out;
}

inline EcgRecording z_normalize_recording(EcgRecording rec) {
  rec.validate();
  const auto n = static_cast<double>(rec.samples.size());
  require(!rec.samples.empty(), "z_normalize_recording: empty recording");
  double mean = 0;
  for (double v : rec.samples) mean += v;
  mean /= n;
  double var = 0;
  for (double v : rec.samples) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0) || sd <= 1e-12 * std::max(1.0, std::abs(mean)))
    throw DegenerateSignalError("z_normalize_recording: recording " + rec.patient_id + " has zero standard deviation");
  for (double& v : rec.samples) v = (v - mean) / sd;
  return rec;
}

struct PreprocessConfig {
  double powerline_hz = 50.0;
  bool z_normalize = false;
  PeakDetectorConfig detector;
};

struct RecordingSegments {
  std::vector<RrrSegment> segments;
  std::size_t n_peaks = 0;
  std::size_t dropped_too_long = 0;
};

/// clean -> (optional z-score) -> detect -> segment.
inline RecordingSegments preprocess_recording(const EcgRecording& raw, const PreprocessConfig& cfg = {}) {
  CleanedSignal cleaned = clean_signal(raw, cfg.powerline_hz);
  if (cfg.z_normalize) {
    EcgRecording tmp{raw.patient_id, raw.lead, raw.sample_rate_hz, std::move(cleaned.samples), raw.label};
    cleaned.samples = z_normalize_recording(std::move(tmp)).samples;
  }
  cleaned = detect_r_peaks(std::move(cleaned), cfg.detector);
  RecordingSegments out;
  out.n_peaks = cleaned.r_peaks.size();
  auto ex = extract_rrr_segments(cleaned, raw.patient_id, raw.label);
  out.segments = std::move(ex.segments);
  out.dropped_too_long = ex.dropped_too_long;
  return out;
}

}  // namespace ecgxai::signal
