#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/core/io.hpp"
#include "ecgxai/signal/types.hpp"

namespace ecgxai::harness {

using signal::EcgRecording;
using signal::Label;
using signal::RrrSegment;

inline constexpr std::size_t kRecordingMetaColumns = 4;  // patient_id,label,lead,sample_rate_hz

struct RowError {
  std::string file;
  std::size_t line = 0;
  std::string message;
  std::string str() const { return file + ":" + std::to_string(line) + ": " + message; }
};

struct IngestOptions {
  bool skip_bad_rows = false;  // otherwise the first bad row throws
  std::optional<signal::Lead> lead;  // keep only rows of this lead
};

struct IngestReport {
  std::vector<EcgRecording> recordings;
  std::vector<RowError> rejected;
  std::vector<std::string> warnings;

  std::map<Label, std::size_t> patients_per_label() const {
    std::map<Label, std::vector<std::string>> ids;
    for (const auto& r : recordings) ids[r.label].push_back(r.patient_id);
    std::map<Label, std::size_t> out;
    for (Label l : signal::kAllLabels) {
      auto& v = ids[l];
      std::sort(v.begin(), v.end());
      out[l] = static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
    }
    return out;
  }
};

namespace detail {

inline std::optional<double> parse_real(std::string_view s) {
  s = io::trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline bool is_header(std::string_view line, std::string_view first_column) {
  return io::trim(io::split_csv(line).front()) == first_column;
}

/// Parses one recording row; the message of any failure is returned instead.
inline std::optional<std::string> parse_recording_row(std::string_view line, std::optional<Label> expected,
                                                      EcgRecording& rec) {
  const auto f = io::split_csv(line);
  if (f.size() <= kRecordingMetaColumns + 1)
    return "expected patient_id,label,lead,sample_rate_hz followed by samples, got " + std::to_string(f.size()) +
           " fields";
  rec.patient_id = std::string(io::trim(f[0]));
  if (rec.patient_id.empty()) return std::string("empty patient_id");
  const auto label = signal::parse_label(io::trim(f[1]));
  if (!label) return "unknown label '" + std::string(io::trim(f[1])) + "'";
  if (expected && *expected != *label)
    return "label " + std::string(signal::label_name(*label)) + " disagrees with manifest label " +
           std::string(signal::label_name(*expected));
  rec.label = *label;
  const auto lead = signal::parse_lead(io::trim(f[2]));
  if (!lead) return "unknown lead '" + std::string(io::trim(f[2])) + "'";
  rec.lead = *lead;
  const auto rate = parse_real(f[3]);
  if (!rate || *rate <= 0 || *rate != static_cast<int>(*rate)) return "sample_rate_hz must be a positive integer";
  rec.sample_rate_hz = static_cast<int>(*rate);
  rec.samples.resize(f.size() - kRecordingMetaColumns);
  for (std::size_t i = kRecordingMetaColumns; i < f.size(); ++i) {
    const auto v = parse_real(f[i]);
    if (!v) return "sample s" + std::to_string(i - kRecordingMetaColumns) + " is not a number";
    if (!std::isfinite(*v)) return "sample s" + std::to_string(i - kRecordingMetaColumns) + " is not finite";
    rec.samples[i - kRecordingMetaColumns] = *v;
  }
  return std::nullopt;
}

inline void reject(IngestReport& rep, const IngestOptions& opt, RowError err) {
  if (!opt.skip_bad_rows) throw InvalidInputError(err.str());
  rep.rejected.push_back(std::move(err));
}

}  // namespace detail

/// Reads one recording CSV (optional header row) into `rep`.
inline void ingest_recording_file(const io::fs::path& path, std::optional<Label> expected, const IngestOptions& opt,
                                  IngestReport& rep) {
  std::istringstream in(io::read_file(path));
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto t = io::trim(line);
    if (t.empty()) continue;
    if (lineno == 1 && detail::is_header(t, "patient_id")) continue;
    EcgRecording rec;
    if (auto err = detail::parse_recording_row(t, expected, rec)) {
      detail::reject(rep, opt, {path.string(), lineno, *err});
      continue;
    }
    if (opt.lead && rec.lead != *opt.lead) continue;
    rep.recordings.push_back(std::move(rec));
  }
}

/// Manifest rows are `path,label`; relative paths resolve against the
/// manifest's directory. An empty label defers to the recording rows.
inline IngestReport ingest(const io::fs::path& manifest, const IngestOptions& opt = {}) {
  if (!io::fs::exists(manifest)) throw InvalidInputError("manifest " + manifest.string() + " does not exist");
  IngestReport rep;
  std::istringstream in(io::read_file(manifest));
  std::string line;
  const auto base = manifest.parent_path();
  std::size_t entries = 0;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (lineno == 1 && detail::is_header(t, "path")) continue;
    const auto f = io::split_csv(t);
    if (f.size() > 2 || io::trim(f[0]).empty()) {
      detail::reject(rep, opt, {manifest.string(), lineno, "expected path,label"});
      continue;
    }
    std::optional<Label> label;
    if (f.size() == 2 && !io::trim(f[1]).empty()) {
      label = signal::parse_label(io::trim(f[1]));
      if (!label) {
        detail::reject(rep, opt, {manifest.string(), lineno, "unknown label '" + std::string(io::trim(f[1])) + "'"});
        continue;
      }
    }
    io::fs::path p(std::string(io::trim(f[0])));
    if (p.is_relative()) p = base / p;
    if (!io::fs::exists(p)) {
      detail::reject(rep, opt, {manifest.string(), lineno, "recording file " + p.string() + " does not exist"});
      continue;
    }
    ++entries;
    ingest_recording_file(p, label, opt, rep);
  }
  if (entries == 0) rep.warnings.push_back("manifest " + manifest.string() + " lists no recordings");
  return rep;
}

inline std::string recording_row(const EcgRecording& r) {
  std::string s = r.patient_id + "," + std::string(signal::label_name(r.label)) + "," +
                  std::string(signal::lead_name(r.lead)) + "," + std::to_string(r.sample_rate_hz);
  for (double v : r.samples) s += "," + io::fmt_real(v);
  return s;
}

inline std::string recording_header(std::size_t n_samples) {
  std::string s = "patient_id,label,lead,sample_rate_hz";
  for (std::size_t i = 0; i < n_samples; ++i) s += ",s" + std::to_string(i);
  return s;
}

/// Writes one CSV per label (`<LABEL>.csv`) plus `manifest.csv` under `dir`.
inline io::fs::path write_recordings(const io::fs::path& dir, const std::vector<EcgRecording>& recs) {
  io::fs::create_directories(dir);
  std::string manifest = "path,label\n";
  for (Label l : signal::kAllLabels) {
    std::string body;
    std::size_t width = 0;
    for (const auto& r : recs)
      if (r.label == l) {
        body += recording_row(r) + "\n";
        width = std::max(width, r.samples.size());
      }
    if (body.empty()) continue;
    const std::string name = std::string(signal::label_name(l)) + ".csv";
    io::atomic_write(dir / name, recording_header(width) + "\n" + body);
    manifest += name + "," + std::string(signal::label_name(l)) + "\n";
  }
  const auto path = dir / "manifest.csv";
  io::atomic_write(path, manifest);
  return path;
}

inline std::string segment_cache_header() {
  std::string s = "patient_id,label,original_length";
  for (std::size_t i = 0; i < signal::kSegmentLength; ++i) s += ",p" + std::to_string(i);
  return s;
}

inline std::string segment_cache_csv(const std::vector<RrrSegment>& segs) {
  std::string out = segment_cache_header() + "\n";
  for (const auto& s : segs) {
    out += s.patient_id + "," + std::string(signal::label_name(s.label)) + "," + std::to_string(s.original_length);
    for (double v : s.padded) out += "," + io::fmt_real(v);
    out += "\n";
  }
  return out;
}

inline std::vector<RrrSegment> read_segment_cache(const io::fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  std::vector<RrrSegment> out;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto t = io::trim(line);
    if (t.empty()) continue;
    if (lineno == 1 && detail::is_header(t, "patient_id")) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    const auto f = io::split_csv(t);
    if (f.size() != 3 + signal::kSegmentLength)
      throw InvalidInputError(where + "expected " + std::to_string(3 + signal::kSegmentLength) + " fields, got " +
                              std::to_string(f.size()));
    RrrSegment s;
    s.patient_id = std::string(io::trim(f[0]));
    const auto label = signal::parse_label(io::trim(f[1]));
    if (!label) throw InvalidInputError(where + "unknown label '" + std::string(io::trim(f[1])) + "'");
    s.label = *label;
    const auto len = detail::parse_real(f[2]);
    if (!len || *len < 2 || *len > static_cast<double>(signal::kSegmentLength))
      throw InvalidInputError(where + "original_length out of range");
    s.original_length = static_cast<std::size_t>(*len);
    s.padded.resize(signal::kSegmentLength);
    for (std::size_t i = 0; i < signal::kSegmentLength; ++i) {
      const auto v = detail::parse_real(f[3 + i]);
      if (!v || !std::isfinite(*v)) throw InvalidInputError(where + "p" + std::to_string(i) + " is not a finite number");
      s.padded[i] = *v;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ecgxai::harness
