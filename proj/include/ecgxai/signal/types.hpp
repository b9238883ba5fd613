#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/core/error.hpp"

namespace ecgxai::signal {

enum class Label { AFIB = 0, SB = 1, SR = 2 };
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<Label, kNumClasses> kAllLabels{Label::AFIB, Label::SB, Label::SR};

inline constexpr std::string_view label_name(Label l) {
  switch (l) {
    case Label::AFIB: return "AFIB";
    case Label::SB: return "SB";
    case Label::SR: return "SR";
  }
  return "?";
}

inline std::optional<Label> parse_label(std::string_view s) {
  for (Label l : kAllLabels)
    if (s == label_name(l)) return l;
  return std::nullopt;
}

inline constexpr std::size_t label_index(Label l) { return static_cast<std::size_t>(l); }

enum class Lead { I, II, III, aVR, aVL, aVF, V1, V2, V3, V4, V5, V6 };
inline constexpr std::array<std::string_view, 12> kLeadNames{"I",  "II", "III", "aVR", "aVL", "aVF",
                                                             "V1", "V2", "V3",  "V4",  "V5",  "V6"};

inline constexpr std::string_view lead_name(Lead l) { return kLeadNames[static_cast<std::size_t>(l)]; }

inline std::optional<Lead> parse_lead(std::string_view s) {
  for (std::size_t i = 0; i < kLeadNames.size(); ++i)
    if (s == kLeadNames[i]) return static_cast<Lead>(i);
  return std::nullopt;
}

/// One single-lead recording in microvolts.
struct EcgRecording {
  std::string patient_id;
  Lead lead = Lead::II;
  int sample_rate_hz = 500;
  std::vector<double> samples;
  Label label = Label::SR;

  void validate() const {
    if (sample_rate_hz <= 0) throw InvalidInputError("recording " + patient_id + ": sample rate must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (!std::isfinite(samples[i]))
        throw InvalidInputError("recording " + patient_id + ": non-finite sample at index " + std::to_string(i));
  }
};

struct CleanedSignal {
  std::vector<double> samples;
  std::vector<std::size_t> r_peaks;  // strictly ascending sample indices
  int sample_rate_hz = 500;
};

inline constexpr std::size_t kSegmentLength = 1500;

/// Heartbeat between R-peaks k and k+2, zero-padded to kSegmentLength.
struct RrrSegment {
  std::string patient_id;
  Label label = Label::SR;
  std::size_t original_length = 0;
  std::size_t start_sample = 0;  // first sample in the source recording
  std::vector<double> padded;    // exactly kSegmentLength values

  std::span<const double> samples() const { return std::span(padded).first(original_length); }
};

}  // namespace ecgxai::signal
