#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ecgxai/explain/attribution.hpp"
#include "ecgxai/explain/export.hpp"
#include "ecgxai/harness/metrics.hpp"
#include "ecgxai/harness/split.hpp"
#include "ecgxai/models/train.hpp"
#include "ecgxai/signal/preprocess.hpp"

#ifndef ECGXAI_VERSION
#define ECGXAI_VERSION "unknown"
#endif

namespace ecgxai::harness {

using json = nlohmann::json;

inline constexpr const char* kVersion = ECGXAI_VERSION;

/// Runs fn(i) for i in [0, n) on at most `jobs` threads. The first exception
/// is rethrown after every worker has stopped.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct PreparedData {
  std::vector<RrrSegment> segments;
  std::size_t recordings = 0, recordings_without_segments = 0, dropped_too_long = 0;
  std::map<signal::Label, std::size_t> segments_per_label;
  std::string source_kind, source_path;  // "manifest" | "segments", recorded in run.json
};

/// Cleans, detects and segments every recording; output order follows input.
inline PreparedData prepare_segments(const std::vector<signal::EcgRecording>& recs,
                                     const signal::PreprocessConfig& cfg, std::size_t jobs = 1) {
  std::vector<signal::RecordingSegments> per(recs.size());
  parallel_for(recs.size(), jobs, [&](std::size_t i) { per[i] = signal::preprocess_recording(recs[i], cfg); });
  PreparedData out;
  out.recordings = recs.size();
  for (signal::Label l : signal::kAllLabels) out.segments_per_label[l] = 0;
  for (auto& p : per) {
    out.dropped_too_long += p.dropped_too_long;
    if (p.segments.empty()) ++out.recordings_without_segments;
    for (auto& s : p.segments) {
      ++out.segments_per_label[s.label];
      out.segments.push_back(std::move(s));
    }
  }
  return out;
}

struct ExperimentConfig {
  models::ModelSpec model;
  std::string normalization = "none";  // none | zscore
  std::size_t n_iterations = 5;
  std::uint64_t seed = 0;
  models::TrainingConfig training;
  SplitRatios ratios;
  double powerline_hz = 50.0;
  bool shuffle_labels = false;  // control: patient labels permuted before splitting
  bool explain = true;
  explain::ExplainOptions explain_options;
  bool save_checkpoints = true;
  std::size_t jobs = 1;

  void validate() const {
    require(n_iterations >= 1, "ExperimentConfig: n_iterations must be at least 1");
    require(normalization == "none" || normalization == "zscore",
            "ExperimentConfig: normalization must be 'none' or 'zscore', got '" + normalization + "'");
    require(powerline_hz == 50.0 || powerline_hz == 60.0, "ExperimentConfig: powerline_hz must be 50 or 60");
  }

  signal::PreprocessConfig preprocess() const {
    signal::PreprocessConfig p;
    p.powerline_hz = powerline_hz;
    p.z_normalize = normalization == "zscore";
    return p;
  }

  std::uint64_t iteration_seed(std::size_t k) const { return mix_seed(seed, 1000 + k); }

  json to_json() const {
    json t = training.to_json();
    t.erase("seed");
    return {{"model", model.to_json()},
            {"normalization", normalization},
            {"n_iterations", n_iterations},
            {"seed", seed},
            {"training", t},
            {"ratios", {ratios.train, ratios.val, ratios.test}},
            {"powerline_hz", powerline_hz},
            {"shuffle_labels", shuffle_labels},
            {"explain", explain},
            {"explain_layer", explain_options.layer ? json(*explain_options.layer) : json(nullptr)},
            {"explain_max_segments", explain_options.max_segments}};
  }
};

struct IterationResult {
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
  PatientSplit patients;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::vector<models::EpochRecord> history;
  std::size_t best_epoch = 0;
  MetricsReport segment, patient;
  std::vector<double> test_probs;
  models::SegmentSet test;
  std::vector<PatientPrediction> patient_predictions;
  std::vector<explain::HeatmapBundle> bundles;
  double seconds = 0;
};

struct ExperimentResult {
  std::vector<IterationResult> iterations;
  MetricsReport mean_segment, mean_patient;
  std::vector<explain::AveragedMap> heatmaps;
  PreparedData data_summary;
};

using Logger = std::function<void(const std::string&)>;

namespace detail {

inline std::vector<RrrSegment> shuffle_patient_labels(std::vector<RrrSegment> segs, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::map<std::string, signal::Label> label_of;
  for (const auto& s : segs)
    if (label_of.emplace(s.patient_id, s.label).second) ids.push_back(s.patient_id);
  std::sort(ids.begin(), ids.end());
  std::vector<signal::Label> labels;
  for (const auto& id : ids) labels.push_back(label_of[id]);
  Rng rng(seed);
  rng.shuffle(labels);
  for (std::size_t i = 0; i < ids.size(); ++i) label_of[ids[i]] = labels[i];
  for (auto& s : segs) s.label = label_of[s.patient_id];
  return segs;
}

inline std::string metric_rows(const std::string& iteration, const MetricsReport& r) {
  std::string out;
  for (std::size_t c = 0; c < kClasses; ++c) {
    const auto& m = r.per_class[c];
    out += iteration + "," + std::string(signal::label_name(signal::kAllLabels[c])) + "," + io::fmt_real(m.accuracy) +
           "," + io::fmt_real(m.specificity) + "," + io::fmt_real(m.sensitivity) + "," + io::fmt_real(m.precision) +
           "," + io::fmt_real(m.f1) + "," + io::fmt_real(m.auc) + "," + std::to_string(m.support) + "\n";
  }
  out += iteration + ",overall," + io::fmt_real(r.overall_accuracy) + ",,,,,," + std::to_string(r.n) + "\n";
  return out;
}

inline std::string confusion_rows(const std::string& iteration, const MetricsReport& r) {
  std::string out;
  for (std::size_t a = 0; a < kClasses; ++a)
    for (std::size_t b = 0; b < kClasses; ++b)
      out += iteration + "," + std::string(level_name(r.level)) + "," +
             std::string(signal::label_name(signal::kAllLabels[a])) + "," +
             std::string(signal::label_name(signal::kAllLabels[b])) + "," + std::to_string(r.confusion[a][b]) + "\n";
  return out;
}

inline json report_json(const MetricsReport& r) {
  json per = json::object();
  for (std::size_t c = 0; c < kClasses; ++c) {
    const auto& m = r.per_class[c];
    per[std::string(signal::label_name(signal::kAllLabels[c]))] = {
        {"accuracy", m.accuracy}, {"specificity", m.specificity}, {"sensitivity", m.sensitivity},
        {"precision", m.precision}, {"f1", m.f1}, {"auc", std::isfinite(m.auc) ? json(m.auc) : json(nullptr)},
        {"support", m.support}};
  }
  return {{"level", level_name(r.level)}, {"overall_accuracy", r.overall_accuracy}, {"n", r.n}, {"per_class", per}};
}

}  // namespace detail

inline constexpr const char* kMetricsHeader = "iteration,label,accuracy,specificity,sensitivity,precision,f1,auc,support";

inline std::string predictions_csv(const IterationResult& it) {
  std::string out;
  for (std::size_t i = 0; i < it.test.size(); ++i) {
    const double* p = it.test_probs.data() + i * kClasses;
    const auto pred = static_cast<std::size_t>(std::max_element(p, p + kClasses) - p);
    out += std::to_string(it.iteration) + "," + std::to_string(i) + "," + it.test.patients[i] + "," +
           std::string(signal::label_name(signal::kAllLabels[it.test.labels[i]])) + "," +
           std::string(signal::label_name(signal::kAllLabels[pred]));
    for (std::size_t c = 0; c < kClasses; ++c) out += "," + io::fmt_real(p[c]);
    out += "\n";
  }
  return out;
}

/// One split/train/evaluate/explain cycle.
inline IterationResult run_iteration(const ExperimentConfig& cfg, const std::vector<RrrSegment>& segments,
                                     std::size_t k, const io::fs::path& run_dir, const Logger& log) {
  const auto t0 = std::chrono::steady_clock::now();
  IterationResult it;
  it.iteration = k;
  it.seed = cfg.iteration_seed(k);
  const auto split = group_shuffle_split(segments, cfg.ratios, it.seed);
  it.patients = split.patients;
  const auto train = models::SegmentSet::from_segments(split.train);
  const auto val = models::SegmentSet::from_segments(split.val);
  it.test = models::SegmentSet::from_segments(split.test);
  it.n_train = train.size();
  it.n_val = val.size();
  it.n_test = it.test.size();
  require(!it.test.empty(), "run_experiment: iteration " + std::to_string(k) + " has an empty test split");

  models::TrainingConfig tc = cfg.training;
  tc.seed = mix_seed(it.seed, 7);
  tc.normalization = cfg.normalization;
  if (log)
    tc.on_epoch = [&, k](std::size_t epoch, double loss, double acc) {
      log("iteration " + std::to_string(k) + " epoch " + std::to_string(epoch) + " loss " + io::fmt_fixed(loss, 4) +
          " val_acc " + io::fmt_fixed(acc, 4));
    };
  auto trained = models::train_model(cfg.model, train, val, tc);
  it.history = trained.history;
  it.best_epoch = trained.best_epoch;
  auto& model = trained.model;

  it.test_probs = model.predict_proba(it.test);
  it.segment = compute_metrics(it.test_probs, it.test.labels, Level::segment);
  it.patient_predictions = patient_majority_vote(it.test.patients, it.test_probs, it.test.labels);
  it.patient = patient_metrics(it.patient_predictions);

  if (cfg.explain) {
    auto& net = model.net();
    if (net.architecture() == models::Architecture::vit || net.has_conv_features())
      it.bundles = explain::explain_segments(model, it.test, cfg.explain_options);
  }
  if (!run_dir.empty()) {
    const auto dir = run_dir / ("iter_" + std::to_string(k));
    io::fs::create_directories(dir);
    if (cfg.save_checkpoints) model.save(dir / "model");
    io::atomic_write(dir / "metrics_segment.csv",
                     std::string(kMetricsHeader) + "\n" + detail::metric_rows(std::to_string(k), it.segment));
    io::atomic_write(dir / "predictions.csv",
                     "iteration,row,patient_id,label,predicted,p_AFIB,p_SB,p_SR\n" + predictions_csv(it));
    if (!it.bundles.empty()) {
      const auto avg = explain::average_all(it.bundles);
      explain::write_averaged_csv(dir / "heatmaps.csv", avg);
    }
  }
  it.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (log)
    log("iteration " + std::to_string(k) + " done: segment acc " + io::fmt_fixed(it.segment.overall_accuracy, 4) +
        ", patient acc " + io::fmt_fixed(it.patient.overall_accuracy, 4));
  return it;
}

inline void write_run_outputs(const ExperimentConfig& cfg, const ExperimentResult& res, const io::fs::path& dir,
                              const std::string& status, const std::string& error = {}) {
  io::fs::create_directories(dir);
  std::string seg = std::string(kMetricsHeader) + "\n", pat = seg;
  std::string conf = "iteration,level,truth,predicted,count\n";
  std::string hist = "iteration,epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  std::string split = "iteration,patient_id,part\n";
  std::string preds = "iteration,row,patient_id,label,predicted,p_AFIB,p_SB,p_SR\n";
  std::string votes = "iteration,patient_id,label,predicted,n_segments,p_AFIB,p_SB,p_SR\n";
  json iters = json::array();
  for (const auto& it : res.iterations) {
    const std::string k = std::to_string(it.iteration);
    seg += detail::metric_rows(k, it.segment);
    pat += detail::metric_rows(k, it.patient);
    conf += detail::confusion_rows(k, it.segment) + detail::confusion_rows(k, it.patient);
    for (const auto& e : it.history)
      hist += k + "," + std::to_string(e.epoch) + "," + io::fmt_real(e.train_loss) + "," +
              io::fmt_real(e.train_accuracy) + "," + io::fmt_real(e.val_loss) + "," + io::fmt_real(e.val_accuracy) +
              "\n";
    for (const auto& [part, ids] : {std::pair{"train", &it.patients.train}, std::pair{"val", &it.patients.val},
                                    std::pair{"test", &it.patients.test}})
      for (const auto& id : *ids) split += k + "," + id + "," + part + "\n";
    preds += predictions_csv(it);
    for (const auto& p : it.patient_predictions) {
      votes += k + "," + p.patient_id + "," + std::string(signal::label_name(signal::kAllLabels[p.truth])) + "," +
               std::string(signal::label_name(signal::kAllLabels[p.label])) + "," + std::to_string(p.n_segments);
      for (double v : p.mean_prob) votes += "," + io::fmt_real(v);
      votes += "\n";
    }
    iters.push_back({{"iteration", it.iteration},
                     {"seed", it.seed},
                     {"train_segments", it.n_train},
                     {"val_segments", it.n_val},
                     {"test_segments", it.n_test},
                     {"best_epoch", it.best_epoch},
                     {"epochs_run", it.history.size()},
                     {"segment", detail::report_json(it.segment)},
                     {"patient", detail::report_json(it.patient)}});
  }
  json summary = nullptr;
  if (!res.iterations.empty()) {
    seg += detail::metric_rows("mean", res.mean_segment);
    pat += detail::metric_rows("mean", res.mean_patient);
    summary = {{"segment", detail::report_json(res.mean_segment)}, {"patient", detail::report_json(res.mean_patient)}};
  }
  io::atomic_write(dir / "metrics_segment.csv", seg);
  io::atomic_write(dir / "metrics_patient.csv", pat);
  io::atomic_write(dir / "confusion.csv", conf);
  io::atomic_write(dir / "history.csv", hist);
  io::atomic_write(dir / "split.csv", split);
  io::atomic_write(dir / "predictions.csv", preds);
  io::atomic_write(dir / "patients.csv", votes);
  if (!res.heatmaps.empty()) {
    explain::write_averaged_csv(dir / "heatmaps.csv", res.heatmaps);
    explain::write_averaged_svgs(dir / "figures", res.heatmaps);
  }
  const auto& d = res.data_summary;
  json data{{"recordings", d.recordings},
            {"recordings_without_segments", d.recordings_without_segments},
            {"dropped_too_long", d.dropped_too_long},
            {"segments", d.segments.size()}};
  for (const auto& [l, n] : d.segments_per_label) data["segments_per_label"][std::string(signal::label_name(l))] = n;
  if (!d.source_kind.empty()) data["source"] = {{"kind", d.source_kind}, {"path", d.source_path}};
  json run{{"format", "ecgxai-run-1"}, {"version", kVersion}, {"status", status},   {"config", cfg.to_json()},
           {"data", data},             {"iterations", iters}, {"mean", summary}};
  if (!error.empty()) run["error"] = error;
  io::atomic_write(dir / "run.json", run.dump(2) + "\n");
}

/// Full protocol over pre-segmented data. With a non-empty `run_dir` every
/// artifact is written there; on failure the finished iterations are still
/// written, `run.json` records the error and the exception propagates.
inline ExperimentResult run_experiment_on_segments(const ExperimentConfig& cfg, PreparedData data,
                                                   const io::fs::path& run_dir = {}, const Logger& log = {}) {
  cfg.validate();
  ExperimentResult res;
  auto segments = std::move(data.segments);
  if (cfg.shuffle_labels) segments = detail::shuffle_patient_labels(std::move(segments), mix_seed(cfg.seed, 99));
  res.data_summary = std::move(data);
  std::vector<std::optional<IterationResult>> slots(cfg.n_iterations);
  // Splits and models are independent per iteration; threads only share
  // the read-only segment list.
  try {
    parallel_for(cfg.n_iterations, cfg.jobs,
                 [&](std::size_t k) { slots[k] = run_iteration(cfg, segments, k, run_dir, log); });
  } catch (const std::exception& e) {
    for (auto& s : slots)
      if (s) res.iterations.push_back(std::move(*s));
    if (!res.iterations.empty()) {
      std::vector<MetricsReport> a, b;
      for (const auto& it : res.iterations) a.push_back(it.segment), b.push_back(it.patient);
      res.mean_segment = mean_report(a);
      res.mean_patient = mean_report(b);
    }
    if (!run_dir.empty()) write_run_outputs(cfg, res, run_dir, "failed", e.what());
    throw;
  }
  std::vector<MetricsReport> seg, pat;
  std::vector<explain::HeatmapBundle> all;
  for (auto& s : slots) {
    seg.push_back(s->segment);
    pat.push_back(s->patient);
    for (auto& b : s->bundles) all.push_back(b);
    res.iterations.push_back(std::move(*s));
  }
  res.mean_segment = mean_report(seg);
  res.mean_patient = mean_report(pat);
  if (!all.empty()) res.heatmaps = explain::average_all(all);
  if (!run_dir.empty()) write_run_outputs(cfg, res, run_dir, "ok");
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::vector<signal::EcgRecording>& recs,
                                       const io::fs::path& run_dir = {}, const Logger& log = {}) {
  cfg.validate();
  auto data = prepare_segments(recs, cfg.preprocess(), cfg.jobs);
  if (log)
    log("prepared " + std::to_string(data.segments.size()) + " segments from " + std::to_string(data.recordings) +
        " recordings (" + std::to_string(data.dropped_too_long) + " over-length dropped)");
  return run_experiment_on_segments(cfg, std::move(data), run_dir, log);
}

}  // namespace ecgxai::harness
