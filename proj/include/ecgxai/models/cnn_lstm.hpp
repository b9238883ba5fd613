#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecgxai/models/model.hpp"

namespace ecgxai::models {

struct CnnLstmConfig {
  std::size_t input_len = 1500;
  std::size_t conv_filters = 32;
  std::size_t kernel_size = 3;
  std::size_t pool_size = 2;
  std::size_t lstm_units = 96;
  double recurrent_dropout = 0.2;
  std::size_t n_classes = 3;

  std::size_t conv_length() const { return input_len - kernel_size + 1; }
  std::size_t timesteps() const { return conv_length() / pool_size; }

  void validate() const {
    require(conv_filters > 0 && kernel_size > 0 && pool_size > 0 && lstm_units > 0 && n_classes >= 2,
            "CnnLstmConfig: sizes must be positive");
    require(input_len >= kernel_size + pool_size - 1, "CnnLstmConfig: input shorter than conv + pool");
    require(recurrent_dropout >= 0 && recurrent_dropout < 1, "CnnLstmConfig: dropout must lie in [0, 1)");
  }

  json to_json() const {
    return {{"input_len", input_len},   {"conv_filters", conv_filters}, {"kernel_size", kernel_size},
            {"pool_size", pool_size},   {"lstm_units", lstm_units},     {"recurrent_dropout", recurrent_dropout},
            {"n_classes", n_classes}};
  }

  static CnnLstmConfig from_json(const json& j) {
    CnnLstmConfig c;
    c.input_len = j.value("input_len", c.input_len);
    c.conv_filters = j.value("conv_filters", c.conv_filters);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.lstm_units = j.value("lstm_units", c.lstm_units);
    c.recurrent_dropout = j.value("recurrent_dropout", c.recurrent_dropout);
    c.n_classes = j.value("n_classes", c.n_classes);
    return c;
  }
};

/// conv (valid) -> ReLU -> max pool -> single-layer LSTM -> dense on the last hidden state.
template <typename T>
class CnnLstm final : public Classifier<T> {
 public:
  CnnLstm(CnnLstmConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    auto& ps = this->params_;
    const std::size_t F = cfg_.conv_filters, H = cfg_.lstm_units;
    ps.add("conv.kernel", tensor::init::he_uniform<T>({F, 1, cfg_.kernel_size}, cfg_.kernel_size, rng));
    ps.add("conv.bias", tensor::init::zeros<T>({F}));
    ps.add("lstm.kernel", tensor::init::glorot_uniform<T>({F, 4 * H}, F, 4 * H, rng));
    ps.add("lstm.recurrent_kernel", tensor::init::glorot_uniform<T>({H, 4 * H}, H, 4 * H, rng));
    auto bias = tensor::init::zeros<T>({4 * H});
    for (std::size_t i = H; i < 2 * H; ++i) bias[i] = T(1);  // forget gate
    ps.add("lstm.bias", bias);
    layers::add_dense(ps, "head.out", H, cfg_.n_classes, rng);
  }

  const CnnLstmConfig& config() const { return cfg_; }
  Architecture architecture() const override { return Architecture::cnn_lstm; }
  json config_json() const override { return cfg_.to_json(); }
  std::size_t input_len() const override { return cfg_.input_len; }
  std::size_t n_classes() const override { return cfg_.n_classes; }
  bool has_conv_features() const override { return true; }

  /// Pooled conv activations (B, F, timesteps).
  Tensor<T> features(const Tensor<T>& batch, const ForwardOptions& opts) override {
    this->check_batch(batch, opts);
    using namespace tensor;
    const auto& ps = this->params_;
    const Tensor<T> x = reshape(batch, {batch.dim(0), 1, cfg_.input_len});
    const Tensor<T> c = relu(conv1d(x, ps.get("conv.kernel"), ps.get("conv.bias")));
    return max_pool1d(c, cfg_.pool_size, cfg_.pool_size);
  }

  Tensor<T> head(const Tensor<T>& feats, const ForwardOptions& opts) override {
    using namespace tensor;
    const auto& ps = this->params_;
    const std::size_t B = feats.dim(0), steps = feats.dim(2), H = cfg_.lstm_units;
    // Input projections for all steps in one product: (B, steps, 4H).
    const Tensor<T> xproj = linear(permute(feats, {0, 2, 1}), ps.get("lstm.kernel"), ps.get("lstm.bias"));
    Tensor<T> mask;
    const bool drop = opts.training && cfg_.recurrent_dropout > 0;
    if (drop) {
      const double keep = 1.0 - cfg_.recurrent_dropout;
      std::vector<T> m(B * H);
      for (auto& v : m) v = opts.rng->uniform() < keep ? static_cast<T>(1.0 / keep) : T(0);
      mask = Tensor<T>({B, H}, std::move(m));
    }
    LstmState<T> st{Tensor<T>::zeros({B, H}), Tensor<T>::zeros({B, H})};
    const Tensor<T>& rk = ps.get("lstm.recurrent_kernel");
    for (std::size_t t = 0; t < steps; ++t) {
      const Tensor<T> xt = reshape(slice(xproj, 1, t, t + 1), {B, 4 * H});
      const Tensor<T> h_in = drop ? mul(st.h, mask) : st.h;
      const Tensor<T> packed = lstm_cell(add(xt, matmul(h_in, rk)), st.c);
      st = {slice(packed, 1, 0, H), slice(packed, 1, H, 2 * H)};
    }
    return layers::dense(ps, "head.out", st.h);
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
  CnnLstmConfig cfg_;
};

}  // namespace ecgxai::models
