#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ecgxai/models/model.hpp"

namespace ecgxai::models {

/// Bottleneck ResNet transposed to 1D. Defaults give the ResNet50 layout.
struct ResNetConfig {
  std::size_t input_len = 1500;
  std::size_t stem_filters = 64;
  std::size_t stem_kernel = 7;
  std::vector<std::size_t> blocks{3, 4, 6, 3};
  std::vector<std::size_t> widths{64, 128, 256, 512};
  std::size_t expansion = 4;
  std::size_t kernel = 3;
  std::size_t head_dense_units = 64;
  double head_dropout = 0.2;
  std::size_t n_classes = 3;

  void validate() const {
    require(!blocks.empty() && blocks.size() == widths.size(), "ResNetConfig: blocks and widths must pair up");
    require(kernel % 2 == 1 && stem_kernel % 2 == 1, "ResNetConfig: kernels must be odd");
    require(head_dropout >= 0 && head_dropout < 1, "ResNetConfig: dropout must lie in [0, 1)");
    for (auto v : blocks) require(v >= 1, "ResNetConfig: every stage needs a block");
    require(final_length() >= 1, "ResNetConfig: input too short for the downsampling chain");
  }

  static std::size_t strided(std::size_t len, std::size_t k, std::size_t stride, std::size_t pad) {
    return len + 2 * pad < k ? 0 : (len + 2 * pad - k) / stride + 1;
  }

  /// Temporal length at the final conv tap.
  std::size_t final_length() const {
    std::size_t len = strided(input_len, stem_kernel, 2, stem_kernel / 2);
    len = strided(len, 3, 2, 1);
    for (std::size_t s = 1; s < blocks.size(); ++s) len = strided(len, kernel, 2, kernel / 2);
    return len;
  }
  std::size_t final_channels() const { return widths.back() * expansion; }

  json to_json() const {
    return {{"input_len", input_len}, {"stem_filters", stem_filters}, {"stem_kernel", stem_kernel},
            {"blocks", blocks},       {"widths", widths},             {"expansion", expansion},
            {"kernel", kernel},       {"head_dense_units", head_dense_units},
            {"head_dropout", head_dropout}, {"n_classes", n_classes}};
  }

  static ResNetConfig from_json(const json& j) {
    ResNetConfig c;
    c.input_len = j.value("input_len", c.input_len);
    c.stem_filters = j.value("stem_filters", c.stem_filters);
    c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
    c.blocks = j.value("blocks", c.blocks);
    c.widths = j.value("widths", c.widths);
    c.expansion = j.value("expansion", c.expansion);
    c.kernel = j.value("kernel", c.kernel);
    c.head_dense_units = j.value("head_dense_units", c.head_dense_units);
    c.head_dropout = j.value("head_dropout", c.head_dropout);
    c.n_classes = j.value("n_classes", c.n_classes);
    return c;
  }
};

template <typename T>
class ResNet1D final : public Classifier<T> {
 public:
  ResNet1D(ResNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    auto& ps = this->params_;
    layers::add_conv_bn(ps, "stem", 1, cfg_.stem_filters, cfg_.stem_kernel, rng);
    std::size_t cin = cfg_.stem_filters;
    for (std::size_t s = 0; s < cfg_.blocks.size(); ++s) {
      const std::size_t w = cfg_.widths[s], cout = w * cfg_.expansion;
      for (std::size_t k = 0; k < cfg_.blocks[s]; ++k) {
        const std::string b = name(s, k);
        layers::add_conv_bn(ps, b + ".a", cin, w, 1, rng);
        layers::add_conv_bn(ps, b + ".b", w, w, cfg_.kernel, rng);
        layers::add_conv_bn(ps, b + ".c", w, cout, 1, rng);
        if (k == 0) layers::add_conv_bn(ps, b + ".proj", cin, cout, 1, rng);
        cin = cout;
      }
    }
    layers::add_dense(ps, "head.dense", cin, cfg_.head_dense_units, rng);
    layers::add_dense(ps, "head.out", cfg_.head_dense_units, cfg_.n_classes, rng);
  }

  const ResNetConfig& config() const { return cfg_; }
  Architecture architecture() const override { return Architecture::resnet; }
  json config_json() const override { return cfg_.to_json(); }
  std::size_t input_len() const override { return cfg_.input_len; }
  std::size_t n_classes() const override { return cfg_.n_classes; }
  bool has_conv_features() const override { return true; }

  /// Final conv activations (B, C', L').
  Tensor<T> features(const Tensor<T>& batch, const ForwardOptions& opts) override {
    this->check_batch(batch, opts);
    using namespace tensor;
    auto& ps = this->params_;
    const bool tr = opts.training;
    const std::size_t B = batch.dim(0);
    Tensor<T> x = reshape(batch, {B, 1, cfg_.input_len});
    x = relu(layers::conv_bn(ps, "stem", x, 2, cfg_.stem_kernel / 2, tr));
    x = max_pool1d(x, 3, 2, 1);
    for (std::size_t s = 0; s < cfg_.blocks.size(); ++s) {
      for (std::size_t k = 0; k < cfg_.blocks[s]; ++k) {
        const std::string b = name(s, k);
        const std::size_t stride = (k == 0 && s > 0) ? 2 : 1;
        Tensor<T> h = relu(layers::conv_bn(ps, b + ".a", x, 1, 0, tr));
        h = relu(layers::conv_bn(ps, b + ".b", h, stride, cfg_.kernel / 2, tr));
        h = layers::conv_bn(ps, b + ".c", h, 1, 0, tr);
        const Tensor<T> shortcut = k == 0 ? layers::conv_bn(ps, b + ".proj", x, stride, 0, tr) : x;
        x = relu(add(h, shortcut));
      }
    }
    return x;
  }

  Tensor<T> head(const Tensor<T>& feats, const ForwardOptions& opts) override {
    using namespace tensor;
    const auto& ps = this->params_;
    const Tensor<T> pooled = mean(feats, 2);
    const Tensor<T> h = layers::maybe_dropout(relu(layers::dense(ps, "head.dense", pooled)), cfg_.head_dropout, opts);
    return layers::dense(ps, "head.out", h);
  }

  ForwardResult<T> forward(const Tensor<T>& batch, const ForwardOptions& opts) override {
    ForwardResult<T> out;
    const Tensor<T> feats = features(batch, opts);
    out.logits = head(feats, opts);
    if (opts.collect) {
      tensor::NoGradGuard guard;
      out.activations = tensor::permute(feats, {0, 2, 1});
    }
    return out;
  }

 private:
  static std::string name(std::size_t s, std::size_t k) {
    return "stage" + std::to_string(s) + ".block" + std::to_string(k);
  }

  ResNetConfig cfg_;
};

}  // namespace ecgxai::models
