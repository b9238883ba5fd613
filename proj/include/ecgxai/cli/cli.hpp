#pragma once

#include <cstdlib>
#include <iostream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecgxai/harness/config.hpp"
#include "ecgxai/harness/experiment.hpp"
#include "ecgxai/harness/ingest.hpp"
#include "ecgxai/harness/synthetic.hpp"

namespace ecgxai::cli {

using json = nlohmann::json;
namespace fs = io::fs;

inline constexpr const char* kDataDirEnv = "ECGXAI_DATA_DIR";
inline constexpr int kExitOk = 0;
inline constexpr int kExitData = 1;
inline constexpr int kExitUsage = 2;

inline constexpr std::size_t kHistogramBin = 100;

/// `$ECGXAI_DATA_DIR/manifest.csv` when the variable is set.
inline std::optional<fs::path> default_manifest() {
  const char* dir = std::getenv(kDataDirEnv);
  if (!dir || !*dir) return std::nullopt;
  return fs::path(dir) / "manifest.csv";
}

inline fs::path sidecar_of(const fs::path& segments) {
  fs::path p = segments;
  p.replace_extension(".json");
  return p;
}

/// Segment-length histogram in samples, one column per label.
inline std::string length_histogram_csv(const std::vector<signal::RrrSegment>& segs) {
  const std::size_t bins = (signal::kSegmentLength + kHistogramBin - 1) / kHistogramBin;
  std::vector<std::array<std::size_t, signal::kNumClasses>> counts(bins, {0, 0, 0});
  for (const auto& s : segs)
    ++counts[std::min(bins - 1, s.original_length / kHistogramBin)][signal::label_index(s.label)];
  std::string out = "bin_start,bin_end";
  for (auto l : signal::kAllLabels) out += "," + std::string(signal::label_name(l));
  out += "\n";
  for (std::size_t b = 0; b < bins; ++b) {
    out += std::to_string(b * kHistogramBin) + "," + std::to_string((b + 1) * kHistogramBin);
    for (std::size_t c : counts[b]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

struct DataArgs {
  std::string manifest, segments;
  double powerline_hz = 50.0;
  std::optional<std::string> lead;
  bool skip_bad_rows = false;
  std::size_t jobs = 1;

  void add_to(CLI::App* app, bool with_segments, bool with_filters = true) {
    app->add_option("--manifest", manifest, "Manifest CSV (path,label); defaults to $" + std::string(kDataDirEnv) +
                                                "/manifest.csv");
    if (with_segments) app->add_option("--segments", segments, "Segment cache written by `preprocess`");
    if (!with_filters) return;
    app->add_option("--powerline", powerline_hz, "Powerline frequency for the notch filter")
        ->check(CLI::IsMember({50.0, 60.0}));
    add_row_options(app);
  }

  void add_row_options(CLI::App* app) {
    app->add_option("--lead", lead, "Keep only rows of this lead");
    app->add_flag("--skip-bad-rows", skip_bad_rows, "Skip malformed rows instead of failing");
  }

  harness::IngestOptions ingest_options() const {
    harness::IngestOptions o;
    o.skip_bad_rows = skip_bad_rows;
    if (lead) {
      o.lead = signal::parse_lead(*lead);
      if (!o.lead) throw InvalidInputError("unknown lead '" + *lead + "'");
    }
    return o;
  }

  fs::path manifest_path() const {
    if (!manifest.empty()) return manifest;
    if (auto p = default_manifest()) return *p;
    throw InvalidInputError("no input data: pass --manifest or --segments, or set " + std::string(kDataDirEnv));
  }
};

struct LoadedData {
  harness::PreparedData data;
  std::string normalization;
  std::vector<std::string> warnings;
};

/// Reads a segment cache, or ingests and preprocesses a manifest.
/// `normalization` is required to match a cache's recorded setting.
inline LoadedData load_data(const DataArgs& a, const std::optional<std::string>& normalization,
                            const harness::Logger& log = {}) {
  LoadedData out;
  if (!a.segments.empty()) {
    const fs::path path = a.segments;
    if (!fs::exists(path)) throw InvalidInputError("segment cache " + path.string() + " does not exist");
    out.normalization = normalization.value_or("none");
    if (fs::exists(sidecar_of(path))) {
      const auto meta = json::parse(io::read_file(sidecar_of(path)), nullptr, false);
      if (meta.is_discarded() || !meta.contains("normalization"))
        throw InvalidInputError(sidecar_of(path).string() + ": not a segment cache description");
      const auto cached = meta["normalization"].get<std::string>();
      if (normalization && *normalization != cached)
        throw InvalidInputError("segment cache " + path.string() + " was built with normalization '" + cached +
                                "', requested '" + *normalization + "'");
      out.normalization = cached;
    }
    auto& d = out.data;
    d.segments = harness::read_segment_cache(path);
    for (auto l : signal::kAllLabels) d.segments_per_label[l] = 0;
    std::set<std::string> ids;
    for (const auto& s : d.segments) {
      ++d.segments_per_label[s.label];
      ids.insert(s.patient_id);
    }
    d.recordings = ids.size();
    d.source_kind = "segments";
    d.source_path = fs::weakly_canonical(path).string();
    if (log) log("read " + std::to_string(d.segments.size()) + " segments from " + path.string());
    return out;
  }
  const fs::path manifest = a.manifest_path();
  auto rep = harness::ingest(manifest, a.ingest_options());
  for (const auto& r : rep.rejected) out.warnings.push_back("skipped " + r.str());
  for (const auto& w : rep.warnings) out.warnings.push_back(w);
  signal::PreprocessConfig pc;
  pc.powerline_hz = a.powerline_hz;
  out.normalization = normalization.value_or("none");
  if (out.normalization != "none" && out.normalization != "zscore")
    throw InvalidInputError("normalization must be 'none' or 'zscore', got '" + out.normalization + "'");
  pc.z_normalize = out.normalization == "zscore";
  out.data = harness::prepare_segments(rep.recordings, pc, a.jobs);
  out.data.source_kind = "manifest";
  out.data.source_path = fs::weakly_canonical(manifest).string();
  if (log)
    log("prepared " + std::to_string(out.data.segments.size()) + " segments from " +
        std::to_string(out.data.recordings) + " recordings");
  return out;
}

/// Run directory and iteration a checkpoint belongs to (`<run>/iter_<k>/model`).
struct CheckpointContext {
  fs::path run_dir;
  std::optional<std::size_t> iteration;
  json run;  // null when run.json is absent
};

inline CheckpointContext checkpoint_context(const fs::path& checkpoint, const std::string& run_override) {
  CheckpointContext c;
  const fs::path iter_dir = fs::absolute(checkpoint).parent_path();
  const std::string name = iter_dir.filename().string();
  if (name.rfind("iter_", 0) == 0) {
    std::size_t k = 0;
    const auto digits = std::string_view(name).substr(5);
    const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec == std::errc() && p == digits.data() + digits.size()) c.iteration = k;
  }
  c.run_dir = run_override.empty() ? iter_dir.parent_path() : fs::path(run_override);
  if (fs::exists(c.run_dir / "run.json")) {
    c.run = json::parse(io::read_file(c.run_dir / "run.json"), nullptr, false);
    if (c.run.is_discarded()) throw InvalidInputError((c.run_dir / "run.json").string() + ": malformed JSON");
  }
  return c;
}

/// Segments of the checkpoint's split part; "all" keeps everything.
inline std::vector<signal::RrrSegment> select_split(std::vector<signal::RrrSegment> segs, const CheckpointContext& ctx,
                                                   const std::string& part) {
  if (part == "all") return segs;
  const fs::path split = ctx.run_dir / "split.csv";
  if (!ctx.iteration || !fs::exists(split))
    throw InvalidInputError("--split " + part + " needs the checkpoint inside a run directory (<run>/iter_<k>/model)" +
                            " with split.csv; use --split all otherwise");
  std::set<std::string> ids;
  std::istringstream in(io::read_file(split));
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (lineno == 1) continue;
    const auto f = io::split_csv(io::trim(line));
    if (f.size() != 3) continue;
    if (io::trim(f[0]) == std::to_string(*ctx.iteration) && io::trim(f[2]) == part)
      ids.insert(std::string(io::trim(f[1])));
  }
  if (ids.empty())
    throw InvalidInputError(split.string() + ": no '" + part + "' patients for iteration " +
                            std::to_string(*ctx.iteration));
  std::vector<signal::RrrSegment> out;
  for (auto& s : segs)
    if (ids.contains(s.patient_id)) out.push_back(std::move(s));
  if (out.empty()) throw InvalidInputError("none of the '" + part + "' patients occur in the input data");
  return out;
}

/// Loads evaluation data for a checkpoint, falling back to the run's source.
inline std::vector<signal::RrrSegment> checkpoint_data(DataArgs a, const models::TrainedModel& model,
                                                       const CheckpointContext& ctx, const std::string& part) {
  if (a.manifest.empty() && a.segments.empty() && ctx.run.is_object() && ctx.run["data"].contains("source")) {
    const auto& src = ctx.run["data"]["source"];
    (src.at("kind") == "segments" ? a.segments : a.manifest) = src.at("path").get<std::string>();
    a.powerline_hz = ctx.run["config"].value("powerline_hz", a.powerline_hz);
  }
  auto loaded = load_data(a, model.normalization());
  auto segs = std::move(loaded.data.segments);
  if (ctx.run.is_object() && ctx.run["config"].value("shuffle_labels", false))
    segs = harness::detail::shuffle_patient_labels(std::move(segs),
                                                   mix_seed(ctx.run["config"].at("seed").get<std::uint64_t>(), 99));
  return select_split(std::move(segs), ctx, part);
}

inline std::string averaged_summary(const std::vector<explain::AveragedMap>& maps) {
  std::string s;
  for (const auto& m : maps)
    s += std::string(signal::label_name(m.label)) + " " + std::string(explain::predicate_name(m.predicate)) + " " +
         m.source.name() + " n=" + std::to_string(m.n_segments) + "\n";
  return s;
}

inline std::string report_markdown(const json& run) {
  std::ostringstream o;
  const auto& cfg = run.at("config");
  o << "# Run report\n\n";
  o << "- version: " << run.value("version", std::string("unknown")) << "\n";
  o << "- status: " << run.value("status", std::string("unknown")) << "\n";
  o << "- architecture: " << cfg.at("model").at("architecture").get<std::string>() << "\n";
  o << "- normalization: " << cfg.value("normalization", std::string("none")) << "\n";
  o << "- iterations: " << run.at("iterations").size() << " of " << cfg.value("n_iterations", 0) << "\n";
  o << "- seed: " << cfg.value("seed", std::uint64_t{0}) << "\n";
  if (run.contains("error")) o << "- error: " << run["error"].get<std::string>() << "\n";
  if (!run.contains("mean") || run["mean"].is_null()) return o.str();
  for (const char* level : {"segment", "patient"}) {
    const auto& r = run["mean"][level];
    o << "\n## " << level << " level (mean over iterations)\n\n";
    o << "overall accuracy " << io::fmt_fixed(r.at("overall_accuracy").get<double>(), 4) << "\n\n";
    o << "| label | accuracy | specificity | sensitivity | precision | f1 | auc |\n";
    o << "|---|---|---|---|---|---|---|\n";
    for (auto l : signal::kAllLabels) {
      const auto& m = r.at("per_class").at(std::string(signal::label_name(l)));
      o << "| " << signal::label_name(l);
      for (const char* k : {"accuracy", "specificity", "sensitivity", "precision", "f1", "auc"})
        o << " | " << (m.at(k).is_null() ? std::string("n/a") : io::fmt_fixed(m.at(k).get<double>(), 4));
      o << " |\n";
    }
  }
  o << "\n## per iteration\n\n| iteration | seed | best epoch | segment accuracy | patient accuracy |\n";
  o << "|---|---|---|---|---|\n";
  for (const auto& it : run.at("iterations"))
    o << "| " << it.at("iteration").get<std::size_t>() << " | " << it.at("seed").get<std::uint64_t>() << " | "
      << it.at("best_epoch").get<std::size_t>() << " | "
      << io::fmt_fixed(it.at("segment").at("overall_accuracy").get<double>(), 4) << " | "
      << io::fmt_fixed(it.at("patient").at("overall_accuracy").get<double>(), 4) << " |\n";
  return o.str();
}

inline std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

/// Parses argv and runs one subcommand. Data errors print one JSON line
/// (`{"error": kind, "message": ...}`) on `err` and return 1.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"ECG rhythm classification and explanation pipeline", "ecgxai"};
  app.set_version_flag("--version", std::string(harness::kVersion));
  app.require_subcommand(1, 1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  harness::Logger log = [&](const std::string& m) {
    if (!quiet) err << "ecgxai: " << m << "\n";
  };

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate recordings and rewrite them as per-label CSVs");
  DataArgs ingest_data;
  std::string ingest_out;
  ingest_data.add_to(ingest, false, false);
  ingest_data.add_row_options(ingest);
  ingest->add_option("--out", ingest_out, "Output directory")->required();

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "Clean, segment and cache RRR segments");
  DataArgs prep_data;
  std::string prep_norm = "none", prep_out;
  prep_data.add_to(prep, false);
  prep->add_option("--normalize", prep_norm, "Recording normalization")->check(CLI::IsMember({"none", "zscore"}));
  prep->add_option("--jobs", prep_data.jobs, "Worker threads")->check(CLI::PositiveNumber);
  prep->add_option("--out", prep_out, "Output directory")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic corpus");
  std::size_t synth_patients = 30;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--patients", synth_patients, "Patients per class")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Run the split/train/evaluate/explain protocol");
  DataArgs train_data;
  std::string train_config, train_out = "run";
  std::optional<std::string> train_arch, train_norm;
  std::optional<std::size_t> train_iters, train_epochs, train_jobs;
  std::optional<std::uint64_t> train_seed;
  bool train_shuffle = false, train_no_explain = false, train_no_ckpt = false;
  train_data.add_to(train, true);
  train->add_option("--config", train_config, "Experiment config file");
  train->add_option("--arch", train_arch, "Architecture")->check(CLI::IsMember({"vit", "resnet", "cnn_lstm"}));
  train->add_option("--normalize", train_norm, "Recording normalization")->check(CLI::IsMember({"none", "zscore"}));
  train->add_option("--iterations", train_iters, "Independent split/train iterations")->check(CLI::PositiveNumber);
  train->add_option("--max-epochs", train_epochs, "Epoch budget per iteration")->check(CLI::PositiveNumber);
  train->add_option("--seed", train_seed, "Master seed");
  train->add_option("--jobs", train_jobs, "Worker threads")->check(CLI::PositiveNumber);
  train->add_flag("--shuffle-labels", train_shuffle, "Permute patient labels (chance-level control)");
  train->add_flag("--no-explain", train_no_explain, "Skip heatmap generation");
  train->add_flag("--no-checkpoints", train_no_ckpt, "Do not write model checkpoints");
  train->add_option("--out", train_out, "Run directory");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split part");
  DataArgs eval_data;
  std::string eval_ckpt, eval_split = "test", eval_run, eval_out;
  eval_data.add_to(eval, true);
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint stem (<run>/iter_<k>/model)")->required();
  eval->add_option("--split", eval_split, "Split part to evaluate")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--run", eval_run, "Run directory holding split.csv (default: inferred from the checkpoint)");
  eval->add_option("--out", eval_out, "Output directory")->required();

  // explain
  auto* expl = app.add_subcommand("explain", "Averaged attention or Grad-CAM maps for a checkpoint");
  DataArgs expl_data;
  std::string expl_ckpt, expl_split = "test", expl_run, expl_out;
  std::optional<std::string> expl_label;
  std::optional<std::size_t> expl_layer;
  std::size_t expl_max = 0;
  bool expl_correct = false, expl_wrong = false;
  expl_data.add_to(expl, true);
  expl->add_option("--checkpoint", expl_ckpt, "Model checkpoint stem (<run>/iter_<k>/model)")->required();
  expl->add_option("--split", expl_split, "Split part to explain")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  expl->add_option("--run", expl_run, "Run directory holding split.csv (default: inferred from the checkpoint)");
  expl->add_option("--label", expl_label, "Keep maps of this true label")->check(CLI::IsMember({"AFIB", "SB", "SR"}));
  auto* correct_flag = expl->add_flag("--correct-only", expl_correct, "Keep correctly classified segments only");
  expl->add_flag("--misclassified-only", expl_wrong, "Keep misclassified segments only")->excludes(correct_flag);
  expl->add_option("--layer", expl_layer, "Attention layer (ViT; default: last)");
  expl->add_option("--max-segments", expl_max, "Explain at most this many segments (0 = all)");
  expl->add_option("--out", expl_out, "Output directory")->required();

  // plot
  auto* plot = app.add_subcommand("plot", "Render averaged-map CSVs as SVG figures");
  std::string plot_in, plot_out;
  plot->add_option("--heatmaps", plot_in, "Averaged-map CSV (heatmaps.csv)")->required();
  plot->add_option("--out", plot_out, "Output directory")->required();

  // report
  auto* report = app.add_subcommand("report", "Summarize a run directory as Markdown");
  std::string report_run, report_out;
  report->add_option("--run", report_run, "Run directory")->required();
  report->add_option("--out", report_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    CLI::App* failed = &app;
    for (auto* s : app.get_subcommands()) failed = s;
    err << failed->help();
    return kExitUsage;
  }

  try {
    if (ingest->parsed()) {
      const auto rep = harness::ingest(ingest_data.manifest_path(), ingest_data.ingest_options());
      for (const auto& w : rep.warnings) log("warning: " + w);
      const fs::path dir = ingest_out;
      harness::write_recordings(dir, rep.recordings);
      std::string rejected = "file,line,message\n";
      for (const auto& r : rep.rejected)
        rejected += r.file + "," + std::to_string(r.line) + ",\"" + r.message + "\"\n";
      io::atomic_write(dir / "rejected.csv", rejected);
      json summary{{"recordings", rep.recordings.size()}, {"rejected_rows", rep.rejected.size()}};
      for (const auto& [l, n] : rep.patients_per_label())
        summary["patients_per_label"][std::string(signal::label_name(l))] = n;
      io::atomic_write(dir / "ingest.json", summary.dump(2) + "\n");
      out << "recordings=" << rep.recordings.size() << " rejected=" << rep.rejected.size() << " out=" << dir.string()
          << "\n";
    } else if (prep->parsed()) {
      auto loaded = load_data(prep_data, prep_norm, log);
      for (const auto& w : loaded.warnings) log("warning: " + w);
      const fs::path dir = prep_out;
      const auto& d = loaded.data;
      io::atomic_write(dir / "segments.csv", harness::segment_cache_csv(d.segments));
      io::atomic_write(dir / "lengths.csv", length_histogram_csv(d.segments));
      json meta{{"normalization", loaded.normalization},
                {"powerline_hz", prep_data.powerline_hz},
                {"source", d.source_path},
                {"recordings", d.recordings},
                {"recordings_without_segments", d.recordings_without_segments},
                {"dropped_too_long", d.dropped_too_long},
                {"segments", d.segments.size()}};
      for (const auto& [l, n] : d.segments_per_label) meta["segments_per_label"][std::string(signal::label_name(l))] = n;
      io::atomic_write(dir / "segments.json", meta.dump(2) + "\n");
      out << "segments=" << d.segments.size() << " recordings=" << d.recordings << " out=" << dir.string() << "\n";
    } else if (synth->parsed()) {
      const auto recs = harness::generate_synthetic(harness::SyntheticSpec{}, synth_patients, synth_seed);
      const auto manifest = harness::write_recordings(synth_out, recs);
      out << "recordings=" << recs.size() << " manifest=" << manifest.string() << "\n";
    } else if (train->parsed()) {
      harness::ExperimentConfig cfg;
      if (!train_config.empty()) cfg = harness::load_experiment_config(train_config);
      if (train_arch) cfg.model.arch = *models::parse_architecture(*train_arch);
      if (train_iters) cfg.n_iterations = *train_iters;
      if (train_epochs) cfg.training.max_epochs = *train_epochs;
      if (train_seed) cfg.seed = *train_seed;
      if (train_jobs) cfg.jobs = *train_jobs;
      if (train_shuffle) cfg.shuffle_labels = true;
      if (train_no_explain) cfg.explain = false;
      if (train_no_ckpt) cfg.save_checkpoints = false;
      if (train->count("--powerline")) cfg.powerline_hz = train_data.powerline_hz;
      train_data.powerline_hz = cfg.powerline_hz;
      train_data.jobs = cfg.jobs;
      std::optional<std::string> norm = train_norm;
      const bool config_sets_norm =
          !train_config.empty() &&
          harness::parse_config_text(io::read_file(train_config), train_config)[""].contains("normalization");
      if (!norm && (config_sets_norm || train_data.segments.empty())) norm = cfg.normalization;
      auto loaded = load_data(train_data, norm, log);
      for (const auto& w : loaded.warnings) log("warning: " + w);
      cfg.normalization = loaded.normalization;
      const auto res = harness::run_experiment_on_segments(cfg, std::move(loaded.data), train_out, log);
      out << "segment_accuracy=" << io::fmt_fixed(res.mean_segment.overall_accuracy, 4)
          << " patient_accuracy=" << io::fmt_fixed(res.mean_patient.overall_accuracy, 4) << " run=" << train_out
          << "\n";
    } else if (eval->parsed()) {
      auto model = models::TrainedModel::load(eval_ckpt);
      const auto ctx = checkpoint_context(eval_ckpt, eval_run);
      const auto segs = checkpoint_data(eval_data, model, ctx, eval_split);
      harness::IterationResult it;
      it.iteration = ctx.iteration.value_or(0);
      it.test = models::SegmentSet::from_segments(segs);
      it.test_probs = model.predict_proba(it.test);
      it.segment = harness::compute_metrics(it.test_probs, it.test.labels, harness::Level::segment);
      it.patient_predictions = harness::patient_majority_vote(it.test.patients, it.test_probs, it.test.labels);
      it.patient = harness::patient_metrics(it.patient_predictions);
      const fs::path dir = eval_out;
      const std::string k = std::to_string(it.iteration);
      io::atomic_write(dir / "metrics_segment.csv",
                       std::string(harness::kMetricsHeader) + "\n" + harness::detail::metric_rows(k, it.segment));
      io::atomic_write(dir / "metrics_patient.csv",
                       std::string(harness::kMetricsHeader) + "\n" + harness::detail::metric_rows(k, it.patient));
      io::atomic_write(dir / "confusion.csv", "iteration,level,truth,predicted,count\n" +
                                                  harness::detail::confusion_rows(k, it.segment) +
                                                  harness::detail::confusion_rows(k, it.patient));
      io::atomic_write(dir / "predictions.csv",
                       "iteration,row,patient_id,label,predicted,p_AFIB,p_SB,p_SR\n" + harness::predictions_csv(it));
      out << "split=" << eval_split << " segments=" << it.test.size()
          << " segment_accuracy=" << io::fmt_fixed(it.segment.overall_accuracy, 4)
          << " patient_accuracy=" << io::fmt_fixed(it.patient.overall_accuracy, 4) << "\n";
    } else if (expl->parsed()) {
      auto model = models::TrainedModel::load(expl_ckpt);
      const auto ctx = checkpoint_context(expl_ckpt, expl_run);
      const auto set = models::SegmentSet::from_segments(checkpoint_data(expl_data, model, ctx, expl_split));
      explain::ExplainOptions opts;
      opts.layer = expl_layer;
      opts.max_segments = expl_max;
      const auto bundles = explain::explain_segments(model, set, opts);
      std::vector<explain::AveragedMap> maps;
      for (auto& m : explain::average_all(bundles)) {
        if (expl_label && signal::label_name(m.label) != *expl_label) continue;
        if (expl_correct && m.predicate != explain::Predicate::correct) continue;
        if (expl_wrong && m.predicate != explain::Predicate::misclassified) continue;
        maps.push_back(std::move(m));
      }
      if (maps.empty()) throw InvalidInputError("no segments match the requested label and predicate");
      const fs::path dir = expl_out;
      explain::write_averaged_csv(dir / "heatmaps.csv", maps);
      const auto figs = explain::write_averaged_svgs(dir / "figures", maps);
      err << (quiet ? "" : averaged_summary(maps));
      out << "maps=" << maps.size() << " figures=" << figs.size() << " out=" << dir.string() << "\n";
    } else if (plot->parsed()) {
      const auto maps = explain::read_averaged_csv(plot_in);
      const auto figs = explain::write_averaged_svgs(plot_out, maps);
      out << "figures=" << figs.size() << " out=" << plot_out << "\n";
    } else if (report->parsed()) {
      const fs::path run_json = fs::path(report_run) / "run.json";
      const auto run = json::parse(io::read_file(run_json), nullptr, false);
      if (run.is_discarded() || !run.is_object() || run.value("format", std::string()) != "ecgxai-run-1")
        throw InvalidInputError(run_json.string() + ": not an ecgxai run manifest");
      const auto md = report_markdown(run);
      if (report_out.empty()) out << md;
      else io::atomic_write(report_out, md);
    }
  } catch (const std::exception& e) {
    std::string kind = "internal";
    if (dynamic_cast<const InvalidInputError*>(&e)) kind = "invalid_input";
    else if (dynamic_cast<const DegenerateSignalError*>(&e)) kind = "degenerate_signal";
    else if (dynamic_cast<const DivergenceError*>(&e)) kind = "divergence";
    else if (dynamic_cast<const ContractError*>(&e)) kind = "contract";
    else if (dynamic_cast<const fs::filesystem_error*>(&e)) kind = "io";
    else if (dynamic_cast<const json::exception*>(&e)) kind = "invalid_input";
    err << json{{"error", kind}, {"message", one_line(e.what())}}.dump() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace ecgxai::cli
