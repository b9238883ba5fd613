#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecgxai/models/model.hpp"
#include "ecgxai/tensor/attention.hpp"

namespace ecgxai::models {

struct ViTConfig {
  std::size_t input_len = 1500;
  std::size_t patch_size = 30;
  std::size_t embed_dim = 16;
  std::size_t n_layers = 3;
  std::size_t n_heads = 2;
  std::size_t encoder_mlp_units = 32;
  std::size_t mlp_units = 128;
  double mlp_dropout = 0.1;
  bool mask_padding = false;
  std::size_t n_classes = 3;

  std::size_t n_patches() const { return input_len / patch_size; }
  std::size_t seq_len() const { return n_patches() + 1; }

  void validate() const {
    require(patch_size > 0 && input_len % patch_size == 0,
            "ViTConfig: input_len " + std::to_string(input_len) + " not divisible by patch_size " +
                std::to_string(patch_size));
    require(embed_dim > 0 && n_heads > 0 && embed_dim % n_heads == 0,
            "ViTConfig: embed_dim " + std::to_string(embed_dim) + " not divisible by n_heads " +
                std::to_string(n_heads));
    require(n_layers >= 1 && mlp_units >= 1 && encoder_mlp_units >= 1 && n_classes >= 2,
            "ViTConfig: layer counts and widths must be positive");
    require(mlp_dropout >= 0 && mlp_dropout < 1, "ViTConfig: dropout must lie in [0, 1)");
  }

  json to_json() const {
    return {{"input_len", input_len},   {"patch_size", patch_size}, {"embed_dim", embed_dim},
            {"n_layers", n_layers},     {"n_heads", n_heads},       {"encoder_mlp_units", encoder_mlp_units},
            {"mlp_units", mlp_units},   {"mlp_dropout", mlp_dropout}, {"mask_padding", mask_padding},
            {"n_classes", n_classes}};
  }

  static ViTConfig from_json(const json& j) {
    ViTConfig c;
    c.input_len = j.value("input_len", c.input_len);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.encoder_mlp_units = j.value("encoder_mlp_units", c.encoder_mlp_units);
    c.mlp_units = j.value("mlp_units", c.mlp_units);
    c.mlp_dropout = j.value("mlp_dropout", c.mlp_dropout);
    c.mask_padding = j.value("mask_padding", c.mask_padding);
    c.n_classes = j.value("n_classes", c.n_classes);
    return c;
  }
};

/// Key mask for one segment: the CLS slot and every patch starting inside the
/// real signal stay attendable; patches lying wholly in the zero tail do not.
inline std::vector<std::uint8_t> patch_key_mask(const ViTConfig& cfg, std::size_t original_length) {
  std::vector<std::uint8_t> m(cfg.seq_len(), 1);
  for (std::size_t p = 0; p < cfg.n_patches(); ++p) m[p + 1] = p * cfg.patch_size < original_length ? 1 : 0;
  return m;
}

/// Pre-norm vision transformer over 1D patches with a learnable class token.
template <typename T>
class ViT final : public Classifier<T> {
 public:
  ViT(ViTConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    auto& ps = this->params_;
    const std::size_t D = cfg_.embed_dim;
    ps.add("patch.kernel", tensor::init::truncated_normal<T>({cfg_.patch_size, D}, 0.02, rng));
    ps.add("patch.bias", tensor::init::zeros<T>({D}));
    ps.add("cls_token", tensor::init::truncated_normal<T>({1, 1, D}, 0.02, rng));
    ps.add("position", tensor::init::truncated_normal<T>({1, cfg_.seq_len(), D}, 0.02, rng));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string b = block(l);
      layers::add_layer_norm(ps, b + ".ln1", D);
      for (const char* w : {"query", "key", "value", "output"}) {
        ps.add(b + ".attn." + w + ".kernel", tensor::init::truncated_normal<T>({D, D}, 0.02, rng));
        ps.add(b + ".attn." + w + ".bias", tensor::init::zeros<T>({D}));
      }
      layers::add_layer_norm(ps, b + ".ln2", D);
      layers::add_dense(ps, b + ".mlp1", D, cfg_.encoder_mlp_units, rng);
      layers::add_dense(ps, b + ".mlp2", cfg_.encoder_mlp_units, D, rng);
    }
    layers::add_layer_norm(ps, "head.ln", D);
    layers::add_dense(ps, "head.mlp", D, cfg_.mlp_units, rng);
    layers::add_dense(ps, "head.out", cfg_.mlp_units, cfg_.n_classes, rng);
  }

  const ViTConfig& config() const { return cfg_; }
  Architecture architecture() const override { return Architecture::vit; }
  json config_json() const override { return cfg_.to_json(); }
  std::size_t input_len() const override { return cfg_.input_len; }
  std::size_t n_classes() const override { return cfg_.n_classes; }

  ForwardResult<T> forward(const Tensor<T>& batch, const ForwardOptions& opts) override {
    this->check_batch(batch, opts);
    using namespace tensor;
    const auto& ps = this->params_;
    const std::size_t B = batch.dim(0), P = cfg_.n_patches(), D = cfg_.embed_dim, S = cfg_.seq_len();

    std::vector<std::uint8_t> key_mask;
    if (cfg_.mask_padding) {
      require(opts.lengths != nullptr, "vit_forward: mask_padding needs per-row original lengths");
      key_mask.reserve(B * S);
      for (std::size_t len : *opts.lengths) {
        const auto m = patch_key_mask(cfg_, len);
        key_mask.insert(key_mask.end(), m.begin(), m.end());
      }
    }

    const Tensor<T> patches =
        linear(reshape(batch, {B, P, cfg_.patch_size}), ps.get("patch.kernel"), ps.get("patch.bias"));
    const Tensor<T> cls = add(Tensor<T>::zeros({B, 1, D}), ps.get("cls_token"));
    Tensor<T> x = add(concat<T>({cls, patches}, 1), ps.get("position"));

    ForwardResult<T> out;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string b = block(l);
      AttentionParams<T> ap{ps.get(b + ".attn.query.kernel"), ps.get(b + ".attn.query.bias"),
                            ps.get(b + ".attn.key.kernel"),   ps.get(b + ".attn.key.bias"),
                            ps.get(b + ".attn.value.kernel"), ps.get(b + ".attn.value.bias"),
                            ps.get(b + ".attn.output.kernel"), ps.get(b + ".attn.output.bias")};
      auto attn = multi_head_attention(layers::layer_norm(ps, b + ".ln1", x), ap, cfg_.n_heads,
                                       cfg_.mask_padding ? &key_mask : nullptr);
      if (opts.collect) out.attention.push_back(attn.weights);
      x = add(x, attn.output);
      const Tensor<T> h = gelu(layers::dense(ps, b + ".mlp1", layers::layer_norm(ps, b + ".ln2", x)));
      x = add(x, layers::dense(ps, b + ".mlp2", h));
    }
    const Tensor<T> token = layers::layer_norm(ps, "head.ln", reshape(slice(x, 1, 0, 1), {B, D}));
    const Tensor<T> hidden = layers::maybe_dropout(gelu(layers::dense(ps, "head.mlp", token)), cfg_.mlp_dropout, opts);
    out.logits = layers::dense(ps, "head.out", hidden);
    return out;
  }

 private:
  static std::string block(std::size_t l) { return "block" + std::to_string(l); }

  ViTConfig cfg_;
};

}  // namespace ecgxai::models
