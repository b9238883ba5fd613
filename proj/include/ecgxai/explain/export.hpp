#pragma once

#include <algorithm>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>

#include "ecgxai/core/io.hpp"
#include "ecgxai/explain/maps.hpp"

namespace ecgxai::explain {

inline constexpr const char* kAveragedCsvHeader = "label,predicate,source,n_segments,index,mean_map,mean_signal,std_signal";

inline std::string averaged_csv(std::span<const AveragedMap> maps) {
  std::string out = std::string(kAveragedCsvHeader) + "\n";
  for (const auto& m : maps) {
    const std::string prefix = std::string(signal::label_name(m.label)) + "," + std::string(predicate_name(m.predicate)) +
                               "," + m.source.name() + "," + std::to_string(m.n_segments) + ",";
    for (std::size_t i = 0; i < m.mean_map.size(); ++i)
      out += prefix + std::to_string(i) + "," + io::fmt_real(m.mean_map[i]) + "," + io::fmt_real(m.mean_signal[i]) +
             "," + io::fmt_real(m.std_signal[i]) + "\n";
  }
  return out;
}

inline void write_averaged_csv(const io::fs::path& path, std::span<const AveragedMap> maps) {
  io::atomic_write(path, averaged_csv(maps));
}

/// Parses the averaged-map CSV back into maps (used by `plot`).
inline std::vector<AveragedMap> read_averaged_csv(const io::fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  std::getline(in, line);
  if (io::trim(line) != kAveragedCsvHeader)
    throw InvalidInputError("read_averaged_csv: " + path.string() + ": unexpected header");
  std::vector<AveragedMap> out;
  std::string key;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (io::trim(line).empty()) continue;
    const auto f = io::split_csv(io::trim(line));
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 8) throw InvalidInputError(where + ": expected 8 fields, got " + std::to_string(f.size()));
    const std::string k = std::string(f[0]) + "," + std::string(f[1]) + "," + std::string(f[2]);
    if (k != key) {
      key = k;
      AveragedMap m;
      const auto label = signal::parse_label(f[0]);
      if (!label) throw InvalidInputError(where + ": unknown label '" + std::string(f[0]) + "'");
      m.label = *label;
      if (f[1] == "correct")
        m.predicate = Predicate::correct;
      else if (f[1] == "misclassified")
        m.predicate = Predicate::misclassified;
      else
        throw InvalidInputError(where + ": unknown predicate '" + std::string(f[1]) + "'");
      if (f[2] == "gradcam") {
        m.source = MapSource::gradcam();
      } else {
        std::size_t l = 0, h = 0;
        if (std::sscanf(std::string(f[2]).c_str(), "attention_l%zu_h%zu", &l, &h) != 2)
          throw InvalidInputError(where + ": unknown source '" + std::string(f[2]) + "'");
        m.source = MapSource::attention(l, h);
      }
      out.push_back(std::move(m));
    }
    auto& m = out.back();
    try {
      m.n_segments = std::stoul(std::string(f[3]));
      m.mean_map.push_back(std::stod(std::string(f[5])));
      m.mean_signal.push_back(std::stod(std::string(f[6])));
      m.std_signal.push_back(std::stod(std::string(f[7])));
    } catch (const std::exception&) {
      throw InvalidInputError(where + ": non-numeric value");
    }
  }
  return out;
}

/// Standalone SVG: heatmap as background column intensity, mean signal line
/// and a shaded +/-1 std band.
inline std::string averaged_svg(const AveragedMap& m) {
  constexpr double W = 900, H = 360, left = 60, right = 20, top = 40, bottom = 40;
  const std::size_t n = m.mean_signal.size();
  require(n >= 2 && m.mean_map.size() == n && m.std_signal.size() == n, "averaged_svg: inconsistent map arrays");
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, m.mean_signal[i] - m.std_signal[i]);
    hi = std::max(hi, m.mean_signal[i] + m.std_signal[i]);
  }
  if (!(hi > lo)) hi = lo + 1;
  const double pw = W - left - right, ph = H - top - bottom;
  auto X = [&](std::size_t i) { return left + pw * static_cast<double>(i) / static_cast<double>(n - 1); };
  auto Y = [&](double v) { return top + ph * (hi - v) / (hi - lo); };
  auto num = [](double v) { return io::fmt_fixed(v, 2); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << signal::label_name(m.label)
    << ' ' << predicate_name(m.predicate) << ", " << m.source.name();
  if (m.n_segments) s << ", n=" << m.n_segments;
  s << "</text>\n<g>\n";
  const double col = pw / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::clamp(m.mean_map[i], 0.0, 1.0);
    s << "<rect x=\"" << num(X(i) - col / 2) << "\" y=\"" << top << "\" width=\"" << num(col + 0.05)
      << "\" height=\"" << ph << "\" fill=\"rgb(220,40,30)\" fill-opacity=\"" << io::fmt_fixed(0.8 * v, 3)
      << "\"/>\n";
  }
  s << "</g>\n<path fill=\"gray\" fill-opacity=\"0.35\" stroke=\"none\" d=\"M";
  for (std::size_t i = 0; i < n; ++i) s << (i ? " L" : "") << num(X(i)) << ',' << num(Y(m.mean_signal[i] + m.std_signal[i]));
  for (std::size_t i = n; i-- > 0;) s << " L" << num(X(i)) << ',' << num(Y(m.mean_signal[i] - m.std_signal[i]));
  s << " Z\"/>\n<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.2\" points=\"";
  for (std::size_t i = 0; i < n; ++i) s << (i ? " " : "") << num(X(i)) << ',' << num(Y(m.mean_signal[i]));
  s << "\"/>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << left << "\" y=\"" << H - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">0</text>\n";
  s << "<text x=\"" << W - right - 30 << "\" y=\"" << H - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">"
    << n - 1 << "</text>\n";
  s << "<text x=\"4\" y=\"" << top + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(hi) << "</text>\n";
  s << "<text x=\"4\" y=\"" << top + ph << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(lo) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

inline std::string averaged_svg_name(const AveragedMap& m) {
  return std::string(signal::label_name(m.label)) + "_" + std::string(predicate_name(m.predicate)) + "_" +
         m.source.name() + ".svg";
}

/// One SVG per averaged map under `dir`; returns the written paths.
inline std::vector<io::fs::path> write_averaged_svgs(const io::fs::path& dir, std::span<const AveragedMap> maps) {
  io::fs::create_directories(dir);
  std::vector<io::fs::path> out;
  for (const auto& m : maps) {
    out.push_back(dir / averaged_svg_name(m));
    io::atomic_write(out.back(), averaged_svg(m));
  }
  return out;
}

}  // namespace ecgxai::explain
