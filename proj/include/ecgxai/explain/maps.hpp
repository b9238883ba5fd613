#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/core/error.hpp"
#include "ecgxai/signal/types.hpp"

namespace ecgxai::explain {

inline constexpr std::size_t kMapLength = signal::kSegmentLength;

struct MapSource {
  enum class Kind { attention, gradcam };
  Kind kind = Kind::attention;
  std::size_t layer = 0, head = 0;

  static MapSource attention(std::size_t layer, std::size_t head) { return {Kind::attention, layer, head}; }
  static MapSource gradcam() { return {Kind::gradcam, 0, 0}; }

  std::string name() const {
    if (kind == Kind::gradcam) return "gradcam";
    return "attention_l" + std::to_string(layer) + "_h" + std::to_string(head);
  }
  bool operator==(const MapSource&) const = default;
};

enum class Predicate { correct, misclassified };

inline std::string_view predicate_name(Predicate p) { return p == Predicate::correct ? "correct" : "misclassified"; }

struct SegmentRef {
  std::string patient_id;
  std::size_t index = 0;  // row in the evaluated segment set
  signal::Label label = signal::Label::SR;
  signal::Label predicted = signal::Label::SR;
  std::size_t original_length = 0;
  bool correct() const { return label == predicted; }
};

struct HeatmapBundle {
  MapSource source;
  std::vector<double> map;        // per patch or per conv position, unscaled
  std::vector<double> resampled;  // kMapLength values in [0, 1]
  std::vector<double> signal;     // the segment stretched to kMapLength samples
  SegmentRef segment;
};

struct AveragedMap {
  signal::Label label = signal::Label::SR;
  Predicate predicate = Predicate::correct;
  MapSource source;
  std::vector<double> mean_map, mean_signal, std_signal;
  std::size_t n_segments = 0;
};

/// Min-max scaling onto [0, 1]; a constant map becomes all zeros.
inline std::vector<double> scale_unit(std::span<const double> map) {
  require(!map.empty(), "scale_unit: empty map");
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  std::vector<double> out(map.size(), 0.0);
  const double range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = (map[i] - *lo) / range;
  out[static_cast<std::size_t>(hi - map.begin())] = 1.0;
  return out;
}

/// Piecewise-linear interpolation of (positions, values) knots onto
/// kMapLength points spanning samples [0, original_length - 1]. Outside the
/// knot range the nearest knot value is held.
inline std::vector<double> resample_knots(std::span<const double> positions, std::span<const double> values,
                                          std::size_t original_length) {
  require(original_length >= 2, "resample_to_1500: original_length must be at least 2");
  require(!values.empty() && positions.size() == values.size(), "resample_to_1500: knots and values differ");
  for (std::size_t k = 1; k < positions.size(); ++k)
    require(positions[k] > positions[k - 1], "resample_to_1500: knot positions must increase");
  std::vector<double> out(kMapLength);
  const double extent = static_cast<double>(original_length - 1);
  std::size_t k = 0;
  for (std::size_t i = 0; i < kMapLength; ++i) {
    const double s = extent * static_cast<double>(i) / static_cast<double>(kMapLength - 1);
    if (s <= positions.front()) {
      out[i] = values.front();
    } else if (s >= positions.back()) {
      out[i] = values.back();
    } else {
      while (positions[k + 1] < s) ++k;
      const double t = (s - positions[k]) / (positions[k + 1] - positions[k]);
      out[i] = values[k] + t * (values[k + 1] - values[k]);
    }
  }
  return out;
}

/// Stretches a map whose values are evenly spaced over the whole segment
/// (first value at sample 0, last at original_length - 1) onto kMapLength points.
inline std::vector<double> resample_to_1500(std::span<const double> map, std::size_t original_length) {
  require(!map.empty(), "resample_to_1500: empty map");
  require(original_length >= 2, "resample_to_1500: original_length must be at least 2");
  if (map.size() == 1) return resample_knots(std::vector<double>{0.0}, map, original_length);
  std::vector<double> pos(map.size());
  const double extent = static_cast<double>(original_length - 1);
  for (std::size_t k = 0; k < map.size(); ++k)
    pos[k] = extent * static_cast<double>(k) / static_cast<double>(map.size() - 1);
  return resample_knots(pos, map, original_length);
}

/// Places a map defined over `n` equal cells of the padded input at the cell
/// centers, keeps the cells whose center lies inside the real segment and
/// resamples them onto the common axis.
inline std::vector<double> resample_cells(std::span<const double> map, std::size_t padded_length,
                                          std::size_t original_length) {
  require(!map.empty(), "resample_cells: empty map");
  require(original_length >= 2 && original_length <= padded_length,
          "resample_cells: original_length must lie in [2, padded_length]");
  const double cell = static_cast<double>(padded_length) / static_cast<double>(map.size());
  std::vector<double> pos, val;
  for (std::size_t k = 0; k < map.size(); ++k) {
    const double center = (static_cast<double>(k) + 0.5) * cell;
    if (center >= static_cast<double>(original_length) && !pos.empty()) break;
    pos.push_back(center);
    val.push_back(map[k]);
  }
  return resample_knots(pos, val, original_length);
}

/// The real part of a padded segment stretched onto the common axis.
inline std::vector<double> resample_signal(std::span<const double> samples, std::size_t original_length) {
  require(samples.size() >= original_length, "resample_signal: fewer samples than original_length");
  return resample_to_1500(samples.first(original_length), original_length);
}

inline std::vector<const HeatmapBundle*> select_bundles(std::span<const HeatmapBundle> bundles, signal::Label label,
                                                        Predicate predicate, const MapSource& source) {
  std::vector<const HeatmapBundle*> out;
  for (const auto& b : bundles)
    if (b.source == source && b.segment.label == label && b.segment.correct() == (predicate == Predicate::correct))
      out.push_back(&b);
  return out;
}

/// Pointwise mean of the resampled maps and mean/population std of the
/// resampled signals. Empty selection yields nullopt.
inline std::optional<AveragedMap> average_maps(std::span<const HeatmapBundle* const> bundles, signal::Label label,
                                               Predicate predicate) {
  if (bundles.empty()) return std::nullopt;
  const MapSource source = bundles.front()->source;
  const std::size_t len = bundles.front()->resampled.size();
  for (const auto* b : bundles) {
    require(b->source == source, "average_maps: bundles come from different map sources");
    require(b->resampled.size() == len && b->signal.size() == len, "average_maps: bundles differ in length");
  }
  AveragedMap out;
  out.label = label;
  out.predicate = predicate;
  out.source = source;
  out.n_segments = bundles.size();
  out.mean_map.assign(len, 0.0);
  out.mean_signal.assign(len, 0.0);
  std::vector<double> m2(len, 0.0);
  double n = 0;
  for (const auto* b : bundles) {
    n += 1;
    for (std::size_t i = 0; i < len; ++i) {
      out.mean_map[i] += (b->resampled[i] - out.mean_map[i]) / n;
      const double d = b->signal[i] - out.mean_signal[i];
      out.mean_signal[i] += d / n;
      m2[i] += d * (b->signal[i] - out.mean_signal[i]);
    }
  }
  out.std_signal.resize(len);
  for (std::size_t i = 0; i < len; ++i) out.std_signal[i] = std::sqrt(std::max(0.0, m2[i] / n));
  return out;
}

/// Every (label, predicate, source) group present in `bundles`, in a fixed order.
inline std::vector<AveragedMap> average_all(std::span<const HeatmapBundle> bundles) {
  std::vector<MapSource> sources;
  for (const auto& b : bundles)
    if (std::find(sources.begin(), sources.end(), b.source) == sources.end()) sources.push_back(b.source);
  std::vector<AveragedMap> out;
  for (const auto& src : sources)
    for (signal::Label l : signal::kAllLabels)
      for (Predicate p : {Predicate::correct, Predicate::misclassified}) {
        const auto sel = select_bundles(bundles, l, p, src);
        if (auto avg = average_maps(sel, l, p)) out.push_back(std::move(*avg));
      }
  return out;
}

}  // namespace ecgxai::explain
