#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "ecgxai/explain/attribution.hpp"
#include "ecgxai/explain/export.hpp"
#include "ecgxai/models/resnet.hpp"
#include "ecgxai/models/vit.hpp"
#include "support/oracles.hpp"

using namespace ecgxai;
using namespace ecgxai::explain;
using ecgxai::testing::ToyConvNet;

namespace {

Tensor<float> random_batch(std::size_t B, std::size_t L, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(B * L);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>({B, L}, std::move(v));
}

HeatmapBundle bundle(std::vector<double> map, std::vector<double> sig, MapSource src = MapSource::gradcam()) {
  HeatmapBundle b;
  b.source = src;
  b.resampled = std::move(map);
  b.signal = std::move(sig);
  return b;
}

std::vector<const HeatmapBundle*> pointers(const std::vector<HeatmapBundle>& v) {
  std::vector<const HeatmapBundle*> out;
  for (const auto& b : v) out.push_back(&b);
  return out;
}

}  // namespace

TEST(ScaleUnit, Examples) {
  const std::vector<double> a{2, 4, 6};
  EXPECT_EQ(scale_unit(a), (std::vector<double>{0, 0.5, 1}));
  const std::vector<double> c{5, 5};
  EXPECT_EQ(scale_unit(c), (std::vector<double>{0, 0}));
  const std::vector<double> unit{0, 0.25, 1, 0.7};
  EXPECT_EQ(scale_unit(unit), unit);
  EXPECT_THROW(scale_unit(std::vector<double>{}), ContractError);
}

TEST(Resample, ConstantAndRamp) {
  const std::vector<double> c(7, 0.3);
  for (double v : resample_to_1500(c, 640)) EXPECT_NEAR(v, 0.3, 1e-12);
  const std::vector<double> ramp{0, 1};
  const auto r = resample_to_1500(ramp, 900);
  ASSERT_EQ(r.size(), kMapLength);
  EXPECT_NEAR(r[750], 0.5, 1e-3);
  EXPECT_NEAR(r.front(), 0.0, 1e-9);
  EXPECT_NEAR(r.back(), 1.0, 1e-9);
  EXPECT_THROW(resample_to_1500(ramp, 1), ContractError);
}

TEST(Resample, MatchesDirectInterpolation) {
  // Knots at fractions of the segment extent; values probed independently
  // from the fraction-of-axis formula.
  const std::vector<double> vals{0.2, 0.9, 0.1, 0.6, 0.4};
  const std::size_t len = 1001;
  const auto r = resample_to_1500(vals, len);
  Rng rng(3);
  for (int probe = 0; probe < 20; ++probe) {
    const auto i = static_cast<std::size_t>(rng.uniform() * 1500) % 1500;
    const double u = static_cast<double>(i) / 1499.0 * 4.0;  // position in knot units
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(u), 3);
    const double expect = vals[k] * (static_cast<double>(k + 1) - u) + vals[k + 1] * (u - static_cast<double>(k));
    EXPECT_NEAR(r[i], expect, 1e-9) << "index " << i;
  }
  EXPECT_NEAR(r.front(), vals.front(), 1e-9);
  EXPECT_NEAR(r.back(), vals.back(), 1e-9);
}

TEST(Resample, UnitMapsStayInUnitInterval) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> m(2 + static_cast<std::size_t>(rng.uniform() * 60));
    for (auto& v : m) v = rng.uniform();
    const auto len = 2 + static_cast<std::size_t>(rng.uniform() * 1498);
    for (double v : resample_cells(scale_unit(m), 1500, len)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Resample, CellsBeyondSegmentAreIgnored) {
  // 50 patches of 30 samples; an 600-sample segment covers patches 0..19.
  std::vector<double> m(50, 0.0);
  for (std::size_t p = 20; p < 50; ++p) m[p] = 1.0;
  const auto r = resample_cells(m, 1500, 600);
  for (double v : r) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(resample_cells(m, 1500, 1), ContractError);
}

TEST(AverageMaps, SingleAndPair) {
  std::vector<HeatmapBundle> one{bundle({0.1, 0.7, 0.2}, {5, -3, 2})};
  const auto a = average_maps(pointers(one), signal::Label::SR, Predicate::correct);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->mean_map, one[0].resampled);
  EXPECT_EQ(a->mean_signal, one[0].signal);
  for (double s : a->std_signal) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(a->n_segments, 1u);

  std::vector<HeatmapBundle> two{bundle({0, 1, 0, 1}, {0, 0, 0, 0}), bundle({1, 0, 1, 0}, {0, 0, 0, 0})};
  const auto b = average_maps(pointers(two), signal::Label::AFIB, Predicate::correct);
  for (double v : b->mean_map) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(AverageMaps, EmptySelectionAndMismatch) {
  EXPECT_FALSE(average_maps({}, signal::Label::SB, Predicate::misclassified));
  std::vector<HeatmapBundle> mixed{bundle({0, 1}, {0, 1}), bundle({0, 1}, {0, 1}, MapSource::attention(2, 0))};
  EXPECT_THROW(average_maps(pointers(mixed), signal::Label::SR, Predicate::correct), ContractError);
  std::vector<HeatmapBundle> ragged{bundle({0, 1}, {0, 1}), bundle({0, 1, 1}, {0, 1, 1})};
  EXPECT_THROW(average_maps(pointers(ragged), signal::Label::SR, Predicate::correct), ContractError);
}

TEST(AverageMaps, MatchesTwoPassRecomputation) {
  Rng rng(5);
  const std::size_t N = 37, L = 1500;
  std::vector<HeatmapBundle> bs;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> m(L), s(L);
    for (auto& v : m) v = rng.uniform();
    for (auto& v : s) v = 800 * rng.normal() + 300;
    bs.push_back(bundle(std::move(m), std::move(s)));
  }
  const auto avg = average_maps(pointers(bs), signal::Label::SR, Predicate::correct);
  ASSERT_TRUE(avg);
  for (std::size_t i = 0; i < L; ++i) {
    const auto want = ecgxai::testing::two_pass_average(bs, i);
    ASSERT_NEAR(avg->mean_map[i], want.mean_map, 1e-9);
    ASSERT_NEAR(avg->mean_signal[i], want.mean_signal, 1e-9);
    ASSERT_NEAR(avg->std_signal[i], want.std_signal, 1e-9);
  }

  auto shuffled = pointers(bs);
  rng.shuffle(shuffled);
  const auto again = average_maps(shuffled, signal::Label::SR, Predicate::correct);
  for (std::size_t i = 0; i < L; ++i) {
    ASSERT_NEAR(again->mean_map[i], avg->mean_map[i], 1e-12);
    ASSERT_NEAR(again->std_signal[i], avg->std_signal[i], 1e-9);
  }
}

TEST(ClsAttention, RowContract) {
  models::ViTConfig cfg;
  models::ViT<float> vit(cfg, 1);
  const auto before = vit.params().checksum();
  const auto x = random_batch(1, 1500, 2);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const auto a = cls_attention_map(vit, x, 1500, std::nullopt, h);
    ASSERT_EQ(a.patches.size(), 50u);
    double total = a.cls_self;
    for (double v : a.patches) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
  EXPECT_THROW(cls_attention_map(vit, x, 1500, cfg.n_layers, 0), ContractError);
  EXPECT_THROW(cls_attention_map(vit, x, 1500, 0, cfg.n_heads), ContractError);
  EXPECT_EQ(vit.params().checksum(), before);
}

TEST(ClsAttention, MaskedPatchesAreZero) {
  models::ViTConfig cfg;
  cfg.mask_padding = true;
  models::ViT<float> vit(cfg, 4);
  const auto x = random_batch(1, 1500, 9);
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const auto a = cls_attention_map(vit, x, 600, l, h);
      for (std::size_t p = 20; p < 50; ++p) EXPECT_EQ(a.patches[p], 0.0f) << "layer " << l << " patch " << p;
    }
}

TEST(ClsAttention, RejectsConvModels) {
  ToyConvNet net(1);
  const Tensor<double> x = Tensor<double>::zeros({1, ToyConvNet::kLen});
  EXPECT_THROW(cls_attention_maps(net, x, nullptr), ContractError);
}

TEST(GradCam, NonNegativeAndParametersUntouched) {
  ToyConvNet net(7);
  Rng rng(1);
  std::vector<double> v(3 * ToyConvNet::kLen);
  for (auto& x : v) x = rng.normal();
  const Tensor<double> x({3, ToyConvNet::kLen}, std::move(v));
  const auto before = net.params().checksum();
  std::vector<std::size_t> targets;
  const auto cams = grad_cam(net, x, targets);
  ASSERT_EQ(cams.size(), 3u);
  ASSERT_EQ(targets.size(), 3u);
  for (const auto& c : cams) {
    ASSERT_EQ(c.size(), ToyConvNet::kLen);
    for (double e : c) EXPECT_GE(e, 0.0);
  }
  EXPECT_EQ(net.params().checksum(), before);
  for (const auto& [_, t] : net.params().entries()) {
    EXPECT_TRUE(t.requires_grad());
    EXPECT_FALSE(t.has_grad());
  }
}

TEST(GradCam, ZeroHeadGivesZeroMap) {
  ToyConvNet net(2);
  for (auto& w : net.params().get("out.kernel").values()) w = 0;
  Rng rng(8);
  std::vector<double> v(ToyConvNet::kLen);
  for (auto& x : v) x = rng.normal();
  std::vector<std::size_t> targets{1};
  const auto cams = grad_cam(net, Tensor<double>({1, ToyConvNet::kLen}, std::move(v)), targets);
  for (double e : cams[0]) EXPECT_EQ(e, 0.0);
}

TEST(GradCam, AgreesWithOcclusionSweep) { EXPECT_GE(ecgxai::testing::occlusion_agreement(10), 8); }

TEST(GradCam, ResNetTapAndRejectsViT) {
  models::ResNetConfig cfg;
  cfg.stem_filters = 8;
  cfg.blocks = {1, 1, 1, 1};
  cfg.widths = {4, 8, 8, 16};
  cfg.head_dense_units = 16;
  models::ResNet1D<float> net(cfg, 3);
  std::vector<std::size_t> targets{0, 2};
  const auto cams = grad_cam(net, random_batch(2, 1500, 4), targets);
  ASSERT_EQ(cams.size(), 2u);
  EXPECT_EQ(cams[0].size(), cfg.final_length());

  models::ViT<float> vit(models::ViTConfig{}, 1);
  std::vector<std::size_t> none;
  EXPECT_THROW(grad_cam(vit, random_batch(1, 1500, 1), none), ContractError);
}

TEST(Export, CsvRoundTripAndSvg) {
  AveragedMap m;
  m.label = signal::Label::SR;
  m.source = MapSource::attention(2, 1);
  m.n_segments = 3;
  for (std::size_t i = 0; i < kMapLength; ++i) {
    m.mean_map.push_back(static_cast<double>(i % 100) / 99.0);
    m.mean_signal.push_back(std::sin(static_cast<double>(i) * 0.01) * 500);
    m.std_signal.push_back(20);
  }
  const auto dir = std::filesystem::temp_directory_path() / "ecgxai_explain_test";
  std::filesystem::create_directories(dir);
  const std::vector<AveragedMap> maps{m};
  write_averaged_csv(dir / "maps.csv", maps);
  const auto back = read_averaged_csv(dir / "maps.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].source, m.source);
  EXPECT_EQ(back[0].label, m.label);
  EXPECT_EQ(back[0].mean_map, m.mean_map);
  EXPECT_EQ(back[0].mean_signal, m.mean_signal);
  EXPECT_EQ(back[0].n_segments, 3u);
  EXPECT_EQ(averaged_svg(back[0]), averaged_svg(m));

  const auto paths = write_averaged_svgs(dir, maps);
  ASSERT_EQ(paths.size(), 1u);
  const auto svg = io::read_file(paths[0]);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(svg, averaged_svg(m));
  std::filesystem::remove_all(dir);
}
