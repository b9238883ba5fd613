#pragma once

// Brute-force reference implementations shared by the unit suites and the
// acceptance binary. None of them calls the routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ecgxai/core/random.hpp"
#include "ecgxai/explain/attribution.hpp"
#include "ecgxai/models/model.hpp"
#include "ecgxai/tensor/ops.hpp"

namespace ecgxai::testing {

using tensor::Tensor;

inline Tensor<double> naive_conv1d(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride,
                                   std::size_t pad) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2), Cout = w.dim(0), K = w.dim(2);
  const std::size_t Lout = (L + 2 * pad - K) / stride + 1;
  Tensor<double> out = Tensor<double>::zeros({B, Cout, Lout});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t o = 0; o < Lout; ++o) {
        double acc = 0;
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t k = 0; k < K; ++k) {
            const long pos = static_cast<long>(o * stride + k) - static_cast<long>(pad);
            if (pos < 0 || pos >= static_cast<long>(L)) continue;
            acc += x[(b * Cin + ci) * L + pos] * w[(co * Cin + ci) * K + k];
          }
        out[(b * Cout + co) * Lout + o] = acc;
      }
  return out;
}

/// Fraction of (positive, negative) pairs ranked correctly, ties half.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1;
        good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return good / pairs;
}

/// Per-patient mode of the row argmax; ties go to the larger mean probability.
inline std::size_t majority_vote_oracle(const std::vector<std::string>& ids, const std::vector<double>& probs,
                                        std::size_t classes, const std::string& patient) {
  std::size_t best = classes, best_votes = 0;
  double best_mean = -1;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t votes = 0, members = 0;
    double sum = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] != patient) continue;
      ++members;
      sum += probs[i * classes + c];
      const double* r = probs.data() + i * classes;
      std::size_t am = 0;
      for (std::size_t k = 1; k < classes; ++k)
        if (r[k] > r[am]) am = k;
      votes += am == c;
    }
    const double mean = sum / static_cast<double>(members);
    if (votes > best_votes || (votes == best_votes && votes > 0 && mean > best_mean))
      best = c, best_votes = votes, best_mean = mean;
  }
  return best;
}

/// Two conv layers (same padding) -> global average pool -> dense.
class ToyConvNet final : public models::Classifier<double> {
 public:
  static constexpr std::size_t kLen = 64, kC1 = 6, kC2 = 8, kClasses = 2;

  explicit ToyConvNet(std::uint64_t seed) {
    Rng rng(seed);
    params_.add("c1.kernel", tensor::init::he_uniform<double>({kC1, 1, 5}, 5, rng));
    params_.add("c1.bias", tensor::init::zeros<double>({kC1}));
    params_.add("c2.kernel", tensor::init::he_uniform<double>({kC2, kC1, 3}, kC1 * 3, rng));
    params_.add("c2.bias", tensor::init::zeros<double>({kC2}));
    models::layers::add_dense(params_, "out", kC2, kClasses, rng);
  }
  models::Architecture architecture() const override { return models::Architecture::resnet; }
  models::json config_json() const override { return {}; }
  std::size_t input_len() const override { return kLen; }
  std::size_t n_classes() const override { return kClasses; }
  bool has_conv_features() const override { return true; }

  Tensor<double> features(const Tensor<double>& batch, const models::ForwardOptions&) override {
    using namespace tensor;
    const Tensor<double> x = reshape(batch, {batch.dim(0), 1, kLen});
    const Tensor<double> h = relu(conv1d<double>(x, params_.get("c1.kernel"), &params_.get("c1.bias"), 1, 2));
    return relu(conv1d<double>(h, params_.get("c2.kernel"), &params_.get("c2.bias"), 1, 1));
  }
  Tensor<double> head(const Tensor<double>& feats, const models::ForwardOptions&) override {
    return models::layers::dense(params_, "out", tensor::mean(feats, 2));
  }
  models::ForwardResult<double> forward(const Tensor<double>& batch, const models::ForwardOptions& o) override {
    models::ForwardResult<double> r;
    r.logits = head(features(batch, o), o);
    return r;
  }
};

/// Number of toy-net inputs (of `trials`) on which the region with the most
/// Grad-CAM mass is also the region whose zeroing drops the target logit most.
inline int occlusion_agreement(int trials = 10) {
  constexpr std::size_t L = ToyConvNet::kLen, region = 8, n_regions = L / region;
  int agree = 0;
  for (int trial = 0; trial < trials; ++trial) {
    ToyConvNet net(100 + static_cast<std::uint64_t>(trial));
    Rng rng(200 + static_cast<std::uint64_t>(trial));
    std::vector<double> v(L);
    for (auto& x : v) x = 0.1 * rng.normal();
    // One salient burst occupying a whole occlusion region.
    const auto at = region * (static_cast<std::size_t>(rng.uniform() * n_regions) % n_regions);
    for (std::size_t i = 0; i < region; ++i) v[at + i] += 3.0 * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const Tensor<double> x({1, L}, v);

    std::vector<std::size_t> targets;
    const auto cam = explain::grad_cam(net, x, targets)[0];
    const std::size_t target = targets[0];

    auto score = [&](const std::vector<double>& in) {
      tensor::NoGradGuard g;
      return net.forward(Tensor<double>({1, L}, in), {}).logits[target];
    };
    const double base = score(v);
    std::size_t best_occ = 0, best_cam = 0;
    double top_drop = -1e300, top_cam = -1e300;
    for (std::size_t r = 0; r < n_regions; ++r) {
      auto occluded = v;
      std::fill(occluded.begin() + static_cast<std::ptrdiff_t>(r * region),
                occluded.begin() + static_cast<std::ptrdiff_t>((r + 1) * region), 0.0);
      const double drop = base - score(occluded);
      if (drop > top_drop) top_drop = drop, best_occ = r;
      const double mass = std::accumulate(cam.begin() + static_cast<std::ptrdiff_t>(r * region),
                                          cam.begin() + static_cast<std::ptrdiff_t>((r + 1) * region), 0.0);
      if (mass > top_cam) top_cam = mass, best_cam = r;
    }
    agree += best_occ == best_cam;
  }
  return agree;
}

/// Mean and population standard deviation at `i` in long double, two passes.
struct TwoPass {
  double mean_map, mean_signal, std_signal;
};

inline TwoPass two_pass_average(const std::vector<explain::HeatmapBundle>& bs, std::size_t i) {
  long double sm = 0, ss = 0;
  for (const auto& b : bs) {
    sm += b.resampled[i];
    ss += b.signal[i];
  }
  const auto n = static_cast<long double>(bs.size());
  const long double mm = sm / n, ms = ss / n;
  long double var = 0;
  for (const auto& b : bs) var += (b.signal[i] - ms) * (b.signal[i] - ms);
  var /= n;
  return {static_cast<double>(mm), static_cast<double>(ms), static_cast<double>(std::sqrt(var))};
}

}  // namespace ecgxai::testing
