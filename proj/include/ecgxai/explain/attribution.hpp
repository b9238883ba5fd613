#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "ecgxai/explain/maps.hpp"
#include "ecgxai/models/train.hpp"

namespace ecgxai::explain {

using models::Classifier;
using models::ForwardOptions;
using tensor::Tensor;

/// Attention of the CLS query at one layer/head, split into the self weight
/// and the weights on the patches.
struct ClsAttention {
  double cls_self = 0;
  std::vector<double> patches;
};

/// CLS rows for every batch row and head at `layer` (final layer when unset).
/// Result is indexed [row][head].
template <typename T>
std::vector<std::vector<ClsAttention>> cls_attention_maps(Classifier<T>& model, const Tensor<T>& batch,
                                                          const std::vector<std::size_t>* lengths,
                                                          std::optional<std::size_t> layer = std::nullopt,
                                                          std::vector<std::size_t>* predicted = nullptr) {
  require(model.architecture() == models::Architecture::vit, "cls_attention_map: model is not a ViT");
  tensor::NoGradGuard guard;
  ForwardOptions opts;
  opts.lengths = lengths;
  opts.collect = true;
  const auto res = model.forward(batch, opts);
  const std::size_t n_layers = res.attention.size();
  const std::size_t l = layer.value_or(n_layers - 1);
  require(l < n_layers, "cls_attention_map: layer " + std::to_string(l) + " out of range (" +
                            std::to_string(n_layers) + " layers)");
  const Tensor<T>& w = res.attention[l];  // (B, H, S, S)
  const std::size_t B = w.dim(0), H = w.dim(1), S = w.dim(2);
  std::vector<std::vector<ClsAttention>> out(B, std::vector<ClsAttention>(H));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h) {
      const T* row = w.data().data() + ((b * H + h) * S) * S;  // query 0 is CLS
      out[b][h].cls_self = static_cast<double>(row[0]);
      out[b][h].patches.assign(row + 1, row + S);
    }
  if (predicted) {
    const std::size_t C = res.logits.dim(1);
    predicted->resize(B);
    for (std::size_t b = 0; b < B; ++b) {
      const T* r = res.logits.data().data() + b * C;
      (*predicted)[b] = static_cast<std::size_t>(std::max_element(r, r + C) - r);
    }
  }
  return out;
}

/// Single-segment form: `segment` is (1, input_len).
template <typename T>
ClsAttention cls_attention_map(Classifier<T>& model, const Tensor<T>& segment, std::size_t original_length,
                               std::optional<std::size_t> layer, std::size_t head) {
  require(segment.ndim() == 2 && segment.dim(0) == 1, "cls_attention_map: expected a single (1, L) segment");
  const std::vector<std::size_t> lens{original_length};
  auto maps = cls_attention_maps(model, segment, &lens, layer);
  require(head < maps[0].size(), "cls_attention_map: head " + std::to_string(head) + " out of range (" +
                                     std::to_string(maps[0].size()) + " heads)");
  return std::move(maps[0][head]);
}

namespace detail {

/// Turns gradient tracking off for every parameter for the guard's lifetime.
template <typename T>
class FrozenParameters {
 public:
  explicit FrozenParameters(tensor::ParameterStore<T>& ps) : ps_(ps) {
    for (auto& [_, t] : ps_.entries()) {
      was_.push_back(t.requires_grad());
      t.set_requires_grad(false);
    }
  }
  ~FrozenParameters() {
    std::size_t i = 0;
    for (auto& [_, t] : ps_.entries()) t.set_requires_grad(was_[i++]);
  }
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  tensor::ParameterStore<T>& ps_;
  std::vector<bool> was_;
};

}  // namespace detail

/// Grad-CAM over the final conv activations A (B, C, L'):
/// cam[l] = ReLU(sum_c alpha_c A[c, l]) with alpha_c the position-mean of
/// d logit[target] / d A[c, :]. `targets` holds one class per row; when it is
/// empty the argmax class is used and written back.
template <typename T>
std::vector<std::vector<double>> grad_cam(Classifier<T>& model, const Tensor<T>& batch,
                                          std::vector<std::size_t>& targets) {
  require(model.has_conv_features(), std::string("grad_cam: ") +
                                         std::string(models::architecture_name(model.architecture())) +
                                         " has no convolutional activation tap");
  const ForwardOptions opts;
  Tensor<T> feats;
  {
    tensor::NoGradGuard guard;
    feats = model.features(batch, opts);
  }
  feats.set_requires_grad(true);
  detail::FrozenParameters<T> frozen(model.params());
  const Tensor<T> logits = model.head(feats, opts);
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (targets.empty()) {
    targets.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
      const T* r = logits.data().data() + b * C;
      targets[b] = static_cast<std::size_t>(std::max_element(r, r + C) - r);
    }
  }
  require(targets.size() == B, "grad_cam: one target class per row required");
  std::vector<T> pick(B * C, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    require(targets[b] < C, "grad_cam: target class out of range");
    pick[b * C + targets[b]] = T(1);
  }
  // Rows are independent in inference mode, so one backward pass serves all.
  tensor::backward(tensor::sum(tensor::mul(logits, Tensor<T>({B, C}, std::move(pick)))));

  const std::size_t K = feats.dim(1), L = feats.dim(2);
  const auto a = feats.data();
  const auto g = feats.grad();
  std::vector<std::vector<double>> out(B, std::vector<double>(L, 0.0));
  if (g.empty()) return out;  // head independent of the activations
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t base = (b * K + k) * L;
      double alpha = 0;
      for (std::size_t l = 0; l < L; ++l) alpha += static_cast<double>(g[base + l]);
      alpha /= static_cast<double>(L);
      if (alpha == 0) continue;
      for (std::size_t l = 0; l < L; ++l) out[b][l] += alpha * static_cast<double>(a[base + l]);
    }
    for (double& v : out[b]) v = std::max(0.0, v);
  }
  return out;
}

struct ExplainOptions {
  std::optional<std::size_t> layer;  // attention layer, final when unset
  std::size_t batch_size = 32;
  std::size_t max_segments = 0;  // 0 = all
};

/// Heatmap bundles for every segment of `data`: one per head for a ViT, one
/// Grad-CAM map for conv models.
inline std::vector<HeatmapBundle> explain_segments(models::TrainedModel& model, const models::SegmentSet& data,
                                                   const ExplainOptions& opt = {}) {
  auto& net = model.net();
  const bool vit = net.architecture() == models::Architecture::vit;
  require(vit || net.has_conv_features(), "explain: " + std::string(models::architecture_name(net.architecture())) +
                                              " supports neither attention maps nor Grad-CAM");
  const std::size_t n = opt.max_segments ? std::min(opt.max_segments, data.size()) : data.size();
  const auto scale = static_cast<float>(model.input_scale());
  std::vector<HeatmapBundle> out;
  std::vector<double> raw(data.width);
  for (std::size_t start = 0; start < n; start += opt.batch_size) {
    const std::size_t end = std::min(n, start + opt.batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const std::vector<std::size_t> lens(data.lengths.begin() + static_cast<std::ptrdiff_t>(start),
                                        data.lengths.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor<float> batch = data.batch(idx, scale);
    std::vector<std::size_t> predicted;
    std::vector<std::vector<std::vector<double>>> maps;  // [row][map]
    std::vector<MapSource> sources;
    if (vit) {
      const auto att = cls_attention_maps(net, batch, &lens, opt.layer, &predicted);
      const std::size_t layer = opt.layer.value_or(model.spec().vit.n_layers - 1);
      for (std::size_t h = 0; h < att.front().size(); ++h) sources.push_back(MapSource::attention(layer, h));
      for (const auto& row : att) {
        auto& m = maps.emplace_back();
        for (const auto& head : row) m.push_back(head.patches);
      }
    } else {
      sources.push_back(MapSource::gradcam());
      for (auto& cam : grad_cam(net, batch, predicted)) maps.push_back({std::move(cam)});
    }
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const std::size_t i = idx[r];
      for (std::size_t j = 0; j < data.width; ++j) raw[j] = data.x[i * data.width + j];
      SegmentRef ref{data.patients[i], i, signal::kAllLabels[data.labels[i]], signal::kAllLabels[predicted[r]],
                     data.lengths[i]};
      const auto sig = resample_signal(raw, ref.original_length);
      for (std::size_t m = 0; m < sources.size(); ++m) {
        HeatmapBundle b;
        b.source = sources[m];
        b.map = std::move(maps[r][m]);
        b.resampled = scale_unit(resample_cells(b.map, data.width, ref.original_length));
        b.signal = sig;
        b.segment = ref;
        out.push_back(std::move(b));
      }
    }
  }
  return out;
}

}  // namespace ecgxai::explain
