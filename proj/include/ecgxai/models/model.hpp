#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ecgxai/core/random.hpp"
#include "ecgxai/tensor/parameters.hpp"

namespace ecgxai::models {

using tensor::Tensor;
using json = nlohmann::json;

enum class Architecture { vit, resnet, cnn_lstm };

inline std::string_view architecture_name(Architecture a) {
  switch (a) {
    case Architecture::vit: return "vit";
    case Architecture::resnet: return "resnet";
    case Architecture::cnn_lstm: return "cnn_lstm";
  }
  return "?";
}

inline std::optional<Architecture> parse_architecture(std::string_view s) {
  if (s == "vit") return Architecture::vit;
  if (s == "resnet") return Architecture::resnet;
  if (s == "cnn_lstm" || s == "cnnlstm" || s == "cnn-lstm") return Architecture::cnn_lstm;
  return std::nullopt;
}

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;                                    // required when training (dropout)
  const std::vector<std::size_t>* lengths = nullptr;     // original segment lengths, per row
  bool collect = false;                                  // attention weights / activation tap
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;                  // (B, n_classes)
  std::vector<Tensor<T>> attention;  // per layer, (B, heads, seq, seq)
  Tensor<T> activations;             // (B, L', C') final conv output, when collected
};

/// Common surface of the three classifiers. Input batches are (B, input_len).
template <typename T>
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Architecture architecture() const = 0;
  virtual json config_json() const = 0;
  virtual std::size_t input_len() const = 0;
  virtual std::size_t n_classes() const = 0;
  virtual ForwardResult<T> forward(const Tensor<T>& batch, const ForwardOptions& opts) = 0;

  /// Convolutional models split into a feature extractor and a head so that
  /// gradients can be taken with respect to the final conv activations.
  virtual bool has_conv_features() const { return false; }
  virtual Tensor<T> features(const Tensor<T>&, const ForwardOptions&) {
    throw ContractError(std::string(architecture_name(architecture())) + " has no convolutional feature tap");
  }
  virtual Tensor<T> head(const Tensor<T>&, const ForwardOptions&) {
    throw ContractError(std::string(architecture_name(architecture())) + " has no convolutional feature tap");
  }

  tensor::ParameterStore<T>& params() { return params_; }
  const tensor::ParameterStore<T>& params() const { return params_; }

 protected:
  void check_batch(const Tensor<T>& batch, const ForwardOptions& opts) const {
    require(batch.ndim() == 2 && batch.dim(1) == input_len(),
            std::string(architecture_name(architecture())) + ": expected batch (B, " + std::to_string(input_len()) +
                "), got " + tensor::shape_str(batch.shape()));
    if (opts.training) require(opts.rng != nullptr, "forward: training mode needs an rng for dropout");
    if (opts.lengths) require(opts.lengths->size() == batch.dim(0), "forward: one length per batch row required");
  }

  tensor::ParameterStore<T> params_;
};

namespace layers {

template <typename T>
void add_dense(tensor::ParameterStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(name + ".kernel", tensor::init::glorot_uniform<T>({in, out}, in, out, rng));
  ps.add(name + ".bias", tensor::init::zeros<T>({out}));
}

template <typename T>
Tensor<T> dense(const tensor::ParameterStore<T>& ps, const std::string& name, const Tensor<T>& x) {
  return tensor::linear(x, ps.get(name + ".kernel"), ps.get(name + ".bias"));
}

template <typename T>
void add_layer_norm(tensor::ParameterStore<T>& ps, const std::string& name, std::size_t dim) {
  ps.add(name + ".gamma", tensor::init::ones<T>({dim}));
  ps.add(name + ".beta", tensor::init::zeros<T>({dim}));
}

template <typename T>
Tensor<T> layer_norm(const tensor::ParameterStore<T>& ps, const std::string& name, const Tensor<T>& x) {
  return tensor::layer_norm(x, ps.get(name + ".gamma"), ps.get(name + ".beta"));
}

template <typename T>
void add_conv_bn(tensor::ParameterStore<T>& ps, const std::string& name, std::size_t cin, std::size_t cout,
                 std::size_t k, Rng& rng) {
  ps.add(name + ".conv", tensor::init::he_uniform<T>({cout, cin, k}, cin * k, rng));
  ps.add(name + ".bn.gamma", tensor::init::ones<T>({cout}));
  ps.add(name + ".bn.beta", tensor::init::zeros<T>({cout}));
  ps.add_batch_norm(name + ".bn", cout);
}

template <typename T>
Tensor<T> conv_bn(tensor::ParameterStore<T>& ps, const std::string& name, const Tensor<T>& x, std::size_t stride,
                  std::size_t padding, bool training) {
  const Tensor<T> y = tensor::conv1d<T>(x, ps.get(name + ".conv"), nullptr, stride, padding);
  return tensor::batch_norm(y, ps.get(name + ".bn.gamma"), ps.get(name + ".bn.beta"), ps.batch_norm(name + ".bn"),
                            training);
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, const ForwardOptions& opts) {
  if (!opts.training || rate <= 0) return x;
  return tensor::dropout(x, rate, true, *opts.rng);
}

}  // namespace layers

}  // namespace ecgxai::models
