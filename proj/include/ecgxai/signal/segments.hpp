#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/signal/types.hpp"

namespace ecgxai::signal {

inline std::vector<double> pad_segment(std::span<const double> samples) {
  require(samples.size() <= kSegmentLength, "pad_segment: length " + std::to_string(samples.size()) +
                                                " exceeds " + std::to_string(kSegmentLength));
  std::vector<double> out(kSegmentLength, 0.0);
  std::copy(samples.begin(), samples.end(), out.begin());
  return out;
}

struct SegmentExtraction {
  std::vector<RrrSegment> segments;
  std::size_t dropped_too_long = 0;
};

/// Segments [p[2i], p[2i+2]) of the cleaned signal.
inline SegmentExtraction extract_rrr_segments(const CleanedSignal& cleaned, const std::string& patient_id,
                                              Label label) {
  SegmentExtraction out;
  const auto& p = cleaned.r_peaks;
  for (std::size_t i = 1; i < p.size(); ++i)
    require(p[i] > p[i - 1], "extract_rrr_segments: r_peaks must be strictly increasing");
  if (!p.empty()) require(p.back() < cleaned.samples.size(), "extract_rrr_segments: peak index out of range");
  for (std::size_t i = 0; i + 2 < p.size(); i += 2) {
    const std::size_t begin = p[i], end = p[i + 2];
    const std::size_t len = end - begin;
    if (len > kSegmentLength) {
      ++out.dropped_too_long;
      continue;
    }
    RrrSegment seg;
    seg.patient_id = patient_id;
    seg.label = label;
    seg.original_length = len;
    seg.start_sample = begin;
    seg.padded = pad_segment(std::span(cleaned.samples).subspan(begin, len));
    out.segments.push_back(std::move(seg));
  }
  return out;
}

struct LengthHistogram {
  std::size_t bin_width = 0;
  std::vector<std::size_t> edges;  // bin k covers [edges[k], edges[k+1])
  std::map<Label, std::vector<std::size_t>> counts;

  bool empty() const { return counts.empty(); }
  std::size_t bins() const { return edges.empty() ? 0 : edges.size() - 1; }

  std::vector<double> percentages(Label l) const {
    std::vector<double> pct(bins(), 0.0);
    auto it = counts.find(l);
    if (it == counts.end()) return pct;
    double total = 0;
    for (auto c : it->second) total += static_cast<double>(c);
    for (std::size_t k = 0; k < pct.size(); ++k) pct[k] = 100.0 * static_cast<double>(it->second[k]) / total;
    return pct;
  }

  /// Left edge of the most populated bin for a label.
  std::size_t mode(Label l) const {
    const auto& c = counts.at(l);
    return edges[static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin())];
  }
};

inline LengthHistogram length_histogram(std::span<const RrrSegment> segments, std::size_t bin_width) {
  require(bin_width > 0, "length_histogram: bin width must be positive");
  LengthHistogram h;
  h.bin_width = bin_width;
  if (segments.empty()) return h;
  std::size_t max_len = 0;
  for (const auto& s : segments) max_len = std::max(max_len, s.original_length);
  const std::size_t nbins = max_len / bin_width + 1;
  for (std::size_t k = 0; k <= nbins; ++k) h.edges.push_back(k * bin_width);
  for (const auto& s : segments) {
    auto& c = h.counts[s.label];
    if (c.empty()) c.assign(nbins, 0);
    ++c[s.original_length / bin_width];
  }
  return h;
}

}  // namespace ecgxai::signal
