#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/core/io.hpp"
#include "ecgxai/models/cnn_lstm.hpp"
#include "ecgxai/models/resnet.hpp"
#include "ecgxai/models/vit.hpp"
#include "ecgxai/signal/types.hpp"
#include "ecgxai/tensor/adam.hpp"
#include "ecgxai/tensor/checkpoint.hpp"

namespace ecgxai::models {

/// Padded segments packed row-major for batching.
struct SegmentSet {
  std::size_t width = signal::kSegmentLength;
  std::vector<float> x;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> labels;
  std::vector<std::string> patients;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  static SegmentSet from_segments(std::span<const signal::RrrSegment> segs) {
    SegmentSet s;
    s.x.reserve(segs.size() * s.width);
    for (const auto& seg : segs) {
      require(seg.padded.size() == s.width, "SegmentSet: segment is not padded to " + std::to_string(s.width));
      for (double v : seg.padded) s.x.push_back(static_cast<float>(v));
      s.lengths.push_back(seg.original_length);
      s.labels.push_back(signal::label_index(seg.label));
      s.patients.push_back(seg.patient_id);
    }
    return s;
  }

  SegmentSet subset(std::span<const std::size_t> idx) const {
    SegmentSet s;
    s.width = width;
    for (std::size_t i : idx) {
      s.x.insert(s.x.end(), x.begin() + static_cast<std::ptrdiff_t>(i * width),
                 x.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
      s.lengths.push_back(lengths[i]);
      s.labels.push_back(labels[i]);
      s.patients.push_back(patients[i]);
    }
    return s;
  }

  /// Rows [begin, end) as a (rows, width) tensor multiplied by `scale`.
  Tensor<float> batch(std::span<const std::size_t> idx, float scale) const {
    std::vector<float> out(idx.size() * width);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) out[r * width + j] = x[idx[r] * width + j] * scale;
    return Tensor<float>({idx.size(), width}, std::move(out));
  }
};

/// Population RMS of the real (unpadded) samples.
inline double signal_rms(const SegmentSet& s) {
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < s.size(); ++r)
    for (std::size_t j = 0; j < s.lengths[r]; ++j) {
      const double v = s.x[r * s.width + j];
      acc += v * v;
      ++n;
    }
  return n ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
}

struct ModelSpec {
  Architecture arch = Architecture::vit;
  ViTConfig vit;
  ResNetConfig resnet;
  CnnLstmConfig cnn_lstm;

  json to_json() const {
    json j{{"architecture", architecture_name(arch)}};
    switch (arch) {
      case Architecture::vit: j["config"] = vit.to_json(); break;
      case Architecture::resnet: j["config"] = resnet.to_json(); break;
      case Architecture::cnn_lstm: j["config"] = cnn_lstm.to_json(); break;
    }
    return j;
  }

  static ModelSpec from_json(const json& j) {
    ModelSpec m;
    const auto arch = parse_architecture(j.at("architecture").get<std::string>());
    if (!arch) throw InvalidInputError("unknown architecture '" + j.at("architecture").get<std::string>() + "'");
    m.arch = *arch;
    const json cfg = j.value("config", json::object());
    switch (m.arch) {
      case Architecture::vit: m.vit = ViTConfig::from_json(cfg); break;
      case Architecture::resnet: m.resnet = ResNetConfig::from_json(cfg); break;
      case Architecture::cnn_lstm: m.cnn_lstm = CnnLstmConfig::from_json(cfg); break;
    }
    return m;
  }

  std::string config_hash() const { return io::hex64(io::fnv1a64(to_json().dump())); }

  template <typename T = float>
  std::unique_ptr<Classifier<T>> build(std::uint64_t seed) const {
    switch (arch) {
      case Architecture::vit: return std::make_unique<ViT<T>>(vit, seed);
      case Architecture::resnet: return std::make_unique<ResNet1D<T>>(resnet, seed);
      case Architecture::cnn_lstm: return std::make_unique<CnnLstm<T>>(cnn_lstm, seed);
    }
    throw ContractError("ModelSpec: unknown architecture");
  }
};

/// Architecture, learned parameters and the frozen input scale.
class TrainedModel {
 public:
  TrainedModel() = default;
  TrainedModel(ModelSpec spec, std::uint64_t seed, double input_scale, std::string normalization)
      : spec_(std::move(spec)),
        net_(spec_.build(seed)),
        seed_(seed),
        input_scale_(input_scale),
        normalization_(std::move(normalization)) {}

  const ModelSpec& spec() const { return spec_; }
  Classifier<float>& net() { return *net_; }
  const Classifier<float>& net() const { return *net_; }
  bool valid() const { return net_ != nullptr; }
  double input_scale() const { return input_scale_; }
  const std::string& normalization() const { return normalization_; }
  std::uint64_t seed() const { return seed_; }

  ForwardOptions eval_options(const std::vector<std::size_t>* lengths) const {
    ForwardOptions o;
    o.lengths = lengths;
    return o;
  }

  /// Class probabilities, row-major (N, n_classes).
  std::vector<double> predict_proba(const SegmentSet& data, std::size_t batch_size = 128) {
    tensor::NoGradGuard guard;
    const std::size_t C = net_->n_classes();
    std::vector<double> probs;
    probs.reserve(data.size() * C);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
      const std::size_t end = std::min(data.size(), start + batch_size);
      idx.resize(end - start);
      std::iota(idx.begin(), idx.end(), start);
      std::vector<std::size_t> lens(data.lengths.begin() + static_cast<std::ptrdiff_t>(start),
                                    data.lengths.begin() + static_cast<std::ptrdiff_t>(end));
      const auto logits = net_->forward(data.batch(idx, static_cast<float>(input_scale_)), eval_options(&lens)).logits;
      const auto p = tensor::softmax(logits);
      for (float v : p.values()) probs.push_back(v);
    }
    return probs;
  }

  json manifest() const {
    return {{"format", "ecgxai-model-1"},     {"model", spec_.to_json()},
            {"config_hash", spec_.config_hash()}, {"seed", seed_},
            {"input_scale", input_scale_},       {"normalization", normalization_},
            {"parameter_checksum", io::hex64(net_->params().checksum())}};
  }

  /// Writes `<stem>.ckpt` (parameters) and `<stem>.json` (manifest).
  void save(const io::fs::path& stem) const {
    tensor::save_parameters(net_->params(), with_ext(stem, ".ckpt"));
    io::atomic_write(with_ext(stem, ".json"), manifest().dump(2) + "\n");
  }

  static TrainedModel load(const io::fs::path& path) {
    io::fs::path stem = path;
    if (stem.extension() == ".json" || stem.extension() == ".ckpt") stem.replace_extension();
    json m;
    try {
      m = json::parse(io::read_file(with_ext(stem, ".json")));
    } catch (const json::exception& e) {
      throw InvalidInputError("model manifest " + with_ext(stem, ".json").string() + ": " + e.what());
    }
    ModelSpec spec = ModelSpec::from_json(m.at("model"));
    if (m.contains("config_hash") && m["config_hash"].get<std::string>() != spec.config_hash())
      throw InvalidInputError("model manifest " + stem.string() + ": config hash mismatch");
    TrainedModel tm(spec, m.value("seed", std::uint64_t{0}), m.value("input_scale", 1.0),
                    m.value("normalization", std::string("none")));
    tensor::load_parameters(tm.net_->params(), with_ext(stem, ".ckpt"));
    return tm;
  }

 private:
  static io::fs::path with_ext(io::fs::path p, const char* ext) {
    p += ext;
    return p;
  }

  ModelSpec spec_;
  std::unique_ptr<Classifier<float>> net_;
  std::uint64_t seed_ = 0;
  double input_scale_ = 1.0;
  std::string normalization_ = "none";
};

struct TrainingConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  double learning_rate = 1e-3;
  bool cosine_schedule = false;
  bool stop_at_perfect_val = true;
  bool recalibrate_bn = true;  // population statistics before each validation pass
  std::size_t bn_calibration_rows = 2048;
  std::uint64_t seed = 0;
  std::string normalization = "none";
  std::function<void(std::size_t epoch, double train_loss, double val_acc)> on_epoch;

  json to_json() const {
    return {{"batch_size", batch_size},       {"max_epochs", max_epochs},
            {"patience", patience},           {"learning_rate", learning_rate},
            {"cosine_schedule", cosine_schedule}, {"stop_at_perfect_val", stop_at_perfect_val},
            {"recalibrate_bn", recalibrate_bn}, {"bn_calibration_rows", bn_calibration_rows},
            {"seed", seed}};
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
  double seconds = 0;
};

struct TrainResult {
  TrainedModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t skipped_steps = 0;
};

namespace detail {

inline Tensor<float> one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<float> v(labels.size() * classes, 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < classes, "one_hot: label out of range");
    v[i * classes + labels[i]] = 1.0f;
  }
  return Tensor<float>({labels.size(), classes}, std::move(v));
}

inline std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

struct Snapshot {
  std::vector<std::vector<float>> params;
  std::vector<tensor::BatchNormState<float>> bn;

  static Snapshot take(const tensor::ParameterStore<float>& ps) {
    Snapshot s;
    for (const auto& [_, t] : ps.entries()) s.params.push_back(t.values());
    for (const auto& n : ps.batch_norm_names()) s.bn.push_back(ps.batch_norm(n));
    return s;
  }
  void restore(tensor::ParameterStore<float>& ps) const {
    std::size_t k = 0;
    for (auto& [_, t] : ps.entries()) t.values() = params[k++];
    k = 0;
    for (const auto& n : ps.batch_norm_names()) ps.batch_norm(n) = bn[k++];
  }
};

}  // namespace detail

/// Replaces the running batch-norm statistics with the equal-weight average
/// of batch statistics over up to `max_rows` shuffled rows of `data`.
inline void recalibrate_batch_norm(TrainedModel& model, const SegmentSet& data, std::size_t batch_size,
                                   std::size_t max_rows, std::uint64_t seed) {
  auto& net = model.net();
  auto& ps = net.params();
  if (ps.batch_norm_names().empty() || data.size() < 2) return;
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  order.resize(std::min(order.size(), std::max<std::size_t>(max_rows, 2)));
  for (const auto& n : ps.batch_norm_names()) ps.batch_norm(n).begin_cumulative();
  tensor::NoGradGuard guard;
  const auto scale = static_cast<float>(model.input_scale());
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < 2) break;
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    std::vector<std::size_t> lens;
    for (std::size_t i : idx) lens.push_back(data.lengths[i]);
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &rng;
    opts.lengths = &lens;
    net.forward(data.batch(idx, scale), opts);
  }
  for (const auto& n : ps.batch_norm_names()) ps.batch_norm(n).cumulative = false;
}

/// Evaluation-mode loss and accuracy.
inline std::pair<double, double> evaluate(TrainedModel& model, const SegmentSet& data) {
  const auto probs = model.predict_proba(data);
  const std::size_t C = model.net().n_classes();
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double* row = probs.data() + i * C;
    loss -= std::log(std::max(row[data.labels[i]], 1e-12));
    if (static_cast<std::size_t>(std::max_element(row, row + C) - row) == data.labels[i]) ++correct;
  }
  const auto n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  return {loss / n, static_cast<double>(correct) / n};
}

/// Mini-batch Adam training; the returned model holds the parameters of the
/// epoch with the best validation accuracy.
inline TrainResult train_model(const ModelSpec& spec, const SegmentSet& train, const SegmentSet& val,
                               const TrainingConfig& cfg) {
  require(!train.empty(), "train_model: empty training split");
  require(!val.empty(), "train_model: empty validation split");
  require(cfg.batch_size >= 2 && cfg.max_epochs >= 1, "train_model: batch_size >= 2 and max_epochs >= 1 required");
  const double rms = signal_rms(train);
  if (!(rms > 0)) throw DegenerateSignalError("train_model: training segments carry no signal");

  TrainResult result;
  result.model = TrainedModel(spec, mix_seed(cfg.seed, 1), 1.0 / rms, cfg.normalization);
  auto& net = result.model.net();
  auto& ps = net.params();
  const std::size_t C = net.n_classes();
  const auto scale = static_cast<float>(result.model.input_scale());

  Rng rng(mix_seed(cfg.seed, 2));
  tensor::AdamState<float> adam(tensor::AdamConfig{cfg.learning_rate});
  std::vector<Tensor<float>> plist = ps.tensors();
  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.max_epochs;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best_acc = -1;
  detail::Snapshot best;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) continue;  // batch statistics need two rows
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::size_t> lens, labels;
      for (std::size_t i : idx) {
        lens.push_back(train.lengths[i]);
        labels.push_back(train.labels[i]);
      }
      ForwardOptions opts;
      opts.training = true;
      opts.rng = &rng;
      opts.lengths = &lens;
      const auto out = net.forward(train.batch(idx, scale), opts);
      const auto loss = tensor::cross_entropy(out.logits, detail::one_hot(labels, C));
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw DivergenceError("train_model: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                              std::to_string(start));
      tensor::backward(loss);
      const double lr_scale = cfg.cosine_schedule ? tensor::cosine_decay(adam.step, total_steps) : 1.0;
      tensor::adam_step(plist, adam, lr_scale);
      ps.zero_grad();
      loss_sum += lv * static_cast<double>(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r)
        if (detail::argmax_row(out.logits.data().subspan(r * C, C)) == labels[r]) ++correct;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (cfg.recalibrate_bn)
      recalibrate_batch_norm(result.model, train, cfg.batch_size, cfg.bn_calibration_rows, mix_seed(cfg.seed, 100 + epoch));
    std::tie(rec.val_loss, rec.val_accuracy) = evaluate(result.model, val);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(epoch, rec.train_loss, rec.val_accuracy);

    if (rec.val_accuracy > best_acc) {
      best_acc = rec.val_accuracy;
      result.best_epoch = epoch;
      best = detail::Snapshot::take(ps);
    }
    if (cfg.stop_at_perfect_val && best_acc >= 1.0) break;
    if (epoch - result.best_epoch >= cfg.patience) break;
  }
  best.restore(ps);
  result.skipped_steps = adam.skipped_steps;
  return result;
}

}  // namespace ecgxai::models
