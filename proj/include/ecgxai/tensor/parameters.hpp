#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ecgxai/core/random.hpp"
#include "ecgxai/tensor/ops.hpp"

namespace ecgxai::tensor {

/// Named learnable tensors plus batch-norm running statistics, kept in
/// insertion order so checkpoints and optimizer state line up.
template <typename T>
class ParameterStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    require(!index_.contains(name), "ParameterStore: duplicate parameter '" + name + "'");
    value.set_requires_grad(true);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value));
    return params_.back().second;
  }

  BatchNormState<T>& add_batch_norm(const std::string& name, std::size_t channels) {
    auto [it, inserted] = batch_norms_.try_emplace(name, channels);
    require(inserted, "ParameterStore: duplicate batch norm '" + name + "'");
    bn_order_.push_back(name);
    return it->second;
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParameterStore: unknown parameter '" + name + "'");
    return params_[it->second].second;
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  const BatchNormState<T>& batch_norm(const std::string& name) const {
    auto it = batch_norms_.find(name);
    require(it != batch_norms_.end(), "ParameterStore: unknown batch norm '" + name + "'");
    return it->second;
  }
  BatchNormState<T>& batch_norm(const std::string& name) {
    return const_cast<BatchNormState<T>&>(std::as_const(*this).batch_norm(name));
  }
  const std::vector<std::string>& batch_norm_names() const { return bn_order_; }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return params_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return params_; }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  /// Order-sensitive FNV-1a digest over parameter bytes and running stats.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    for (const auto& [name, t] : params_) {
      feed(name.data(), name.size());
      feed(t.values().data(), t.numel() * sizeof(T));
    }
    for (const auto& name : bn_order_) {
      const auto& s = batch_norms_.at(name);
      feed(s.running_mean.data(), s.running_mean.size() * sizeof(T));
      feed(s.running_var.data(), s.running_var.size() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, BatchNormState<T>> batch_norms_;
  std::vector<std::string> bn_order_;
};

namespace init {

template <typename T>
Tensor<T> zeros(Shape shape) {
  return Tensor<T>::zeros(std::move(shape));
}

template <typename T>
Tensor<T> ones(Shape shape) {
  return Tensor<T>::full(std::move(shape), T(1));
}

/// Normal(0, stddev) truncated at two standard deviations.
template <typename T>
Tensor<T> truncated_normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.truncated_normal(stddev));
  return t;
}

/// He-uniform: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

/// Glorot-uniform, used for dense and recurrent kernels.
template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace init

}  // namespace ecgxai::tensor
