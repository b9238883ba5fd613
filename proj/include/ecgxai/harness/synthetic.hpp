#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "ecgxai/core/random.hpp"
#include "ecgxai/signal/types.hpp"

namespace ecgxai::harness {

using signal::EcgRecording;
using signal::Label;

/// Gaussian deflection placed relative to the R-peak time.
struct WaveBump {
  double offset_s = 0;
  double width_s = 0.01;  // standard deviation
  double amplitude_uv = 0;
};

struct BeatTemplate {
  double bpm = 75;
  double bpm_sd = 0;        // patient-to-patient spread of the mean rate
  double rr_jitter = 0.02;  // beat-to-beat RR coefficient of variation
  bool irregular = false;   // RR drawn uniformly in [1-irr, 1+irr] x mean
  double irregularity = 0;
  WaveBump p{-0.20, 0.025, 150};
  WaveBump q{-0.035, 0.010, -120};
  WaveBump r{0.0, 0.012, 1000};
  WaveBump s{0.035, 0.012, -250};
  WaveBump t{0.30, 0.050, 300};
  double fwave_uv = 0;  // atrial fibrillatory oscillation amplitude
};

struct SyntheticSpec {
  BeatTemplate afib, sb, sr;
  int sample_rate_hz = 500;
  std::size_t n_samples = 5000;
  double amplitude_sd = 0.08;  // patient-level multiplicative gain spread
  double baseline_wander_uv = 80;
  double powerline_uv = 15;
  double powerline_hz = 50;
  double white_noise_uv = 8;

  SyntheticSpec() {
    sr.bpm = 75;
    sr.bpm_sd = 3;

    sb.bpm = 50;
    sb.bpm_sd = 2;
    sb.p.amplitude_uv = 70;
    sb.r.amplitude_uv = 1150;
    sb.t.offset_s = 0.34;

    afib.bpm = 100;
    afib.bpm_sd = 6;
    afib.irregular = true;
    afib.irregularity = 0.3;
    afib.p.amplitude_uv = 0;
    afib.r.amplitude_uv = 850;
    afib.t.offset_s = 0.26;
    afib.t.amplitude_uv = 220;
    afib.fwave_uv = 35;
  }

  const BeatTemplate& for_label(Label l) const {
    switch (l) {
      case Label::AFIB: return afib;
      case Label::SB: return sb;
      case Label::SR: return sr;
    }
    return sr;
  }

  void validate() const {
    require(sample_rate_hz > 0, "SyntheticSpec: sample rate must be positive");
    require(n_samples >= 1000, "SyntheticSpec: recordings need at least 1000 samples");
    for (const BeatTemplate* b : {&afib, &sb, &sr}) {
      require(b->bpm >= 30 && b->bpm <= 200, "SyntheticSpec: bpm must lie in [30, 200]");
      require(b->bpm_sd >= 0 && b->rr_jitter >= 0, "SyntheticSpec: spreads must be non-negative");
      require(b->irregularity >= 0 && b->irregularity < 0.6, "SyntheticSpec: irregularity must lie in [0, 0.6)");
      for (const WaveBump* w : {&b->p, &b->q, &b->r, &b->s, &b->t})
        require(w->width_s > 0, "SyntheticSpec: bump widths must be positive");
    }
    require(amplitude_sd >= 0 && amplitude_sd < 0.5, "SyntheticSpec: amplitude_sd must lie in [0, 0.5)");
  }
};

/// R-peak times (seconds) of a generated recording, kept for oracle checks.
struct SyntheticRecording {
  EcgRecording recording;
  std::vector<double> beat_times_s;
};

inline SyntheticRecording synthesize_recording(const SyntheticSpec& spec, Label label, const std::string& patient_id,
                                               std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const BeatTemplate& tpl = spec.for_label(label);
  const double fs = spec.sample_rate_hz;
  const double duration = static_cast<double>(spec.n_samples) / fs;
  const double bpm = std::clamp(tpl.bpm + tpl.bpm_sd * rng.normal(), 0.8 * tpl.bpm, 1.2 * tpl.bpm);
  const double rr_mean = 60.0 / bpm;
  const double gain = std::max(0.5, 1.0 + spec.amplitude_sd * rng.normal());

  SyntheticRecording out;
  auto next_rr = [&] {
    if (tpl.irregular) return rr_mean * rng.uniform(1.0 - tpl.irregularity, 1.0 + tpl.irregularity);
    return rr_mean * std::clamp(1.0 + tpl.rr_jitter * rng.normal(), 0.8, 1.2);
  };
  for (double t = -rng.uniform() * rr_mean; t < duration + 0.5; t += next_rr()) out.beat_times_s.push_back(t);

  std::vector<double> x(spec.n_samples, 0.0);
  for (double tb : out.beat_times_s) {
    for (const WaveBump* w : {&tpl.p, &tpl.q, &tpl.r, &tpl.s, &tpl.t}) {
      if (w->amplitude_uv == 0) continue;
      const double center = tb + w->offset_s;
      const double reach = 5.0 * w->width_s;
      const auto lo = static_cast<long>(std::floor((center - reach) * fs));
      const auto hi = static_cast<long>(std::ceil((center + reach) * fs));
      for (long i = std::max(0L, lo); i <= std::min<long>(hi, static_cast<long>(spec.n_samples) - 1); ++i) {
        const double z = (static_cast<double>(i) / fs - center) / w->width_s;
        x[static_cast<std::size_t>(i)] += gain * w->amplitude_uv * std::exp(-0.5 * z * z);
      }
    }
  }

  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double wander_hz = rng.uniform(0.15, 0.35), wander_phase = rng.uniform(0, two_pi);
  const double line_phase = rng.uniform(0, two_pi);
  const double f_hz = rng.uniform(5.0, 7.0), f_phase = rng.uniform(0, two_pi);
  const double offset = rng.uniform(-200, 200);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / fs;
    x[i] += offset + spec.baseline_wander_uv * std::sin(two_pi * wander_hz * t + wander_phase);
    x[i] += spec.powerline_uv * std::sin(two_pi * spec.powerline_hz * t + line_phase);
    if (tpl.fwave_uv > 0)
      x[i] += tpl.fwave_uv * std::sin(two_pi * f_hz * t + f_phase + 0.8 * std::sin(two_pi * 0.4 * t));
    x[i] += spec.white_noise_uv * rng.normal();
  }

  out.recording.patient_id = patient_id;
  out.recording.label = label;
  out.recording.sample_rate_hz = spec.sample_rate_hz;
  out.recording.samples = std::move(x);
  return out;
}

/// n_per_class recordings per label, one recording per patient, ids "<LABEL>-<k>".
inline std::vector<EcgRecording> generate_synthetic(const SyntheticSpec& spec, std::size_t n_per_class,
                                                    std::uint64_t seed) {
  spec.validate();
  std::vector<EcgRecording> out;
  out.reserve(3 * n_per_class);
  std::uint64_t counter = 0;
  for (Label l : signal::kAllLabels)
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const std::string id = std::string(signal::label_name(l)) + "-" + std::to_string(k);
      out.push_back(synthesize_recording(spec, l, id, mix_seed(seed, counter++)).recording);
    }
  return out;
}

/// Unit spikes every `period` samples starting at `first`.
inline std::vector<double> impulse_train(std::size_t n, std::size_t period, std::size_t first, double amplitude) {
  std::vector<double> x(n, 0.0);
  for (std::size_t i = first; i < n; i += period) x[i] = amplitude;
  return x;
}

}  // namespace ecgxai::harness
