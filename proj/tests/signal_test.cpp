#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <cstring>
#include <numeric>

#include "ecgxai/harness/synthetic.hpp"
#include "ecgxai/signal/preprocess.hpp"

using namespace ecgxai;
using namespace ecgxai::signal;

namespace {

constexpr double kFs = 500.0;

std::vector<double> sinusoid(double f, double amp, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / kFs);
  return x;
}

double rms(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

EcgRecording recording(std::vector<double> x, std::string id = "p", Label l = Label::SR) {
  EcgRecording r;
  r.patient_id = std::move(id);
  r.label = l;
  r.samples = std::move(x);
  return r;
}

CleanedSignal with_peaks(std::size_t n, std::vector<std::size_t> peaks) {
  CleanedSignal c;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = std::sin(0.01 * static_cast<double>(i)) * 100.0;
  c.r_peaks = std::move(peaks);
  return c;
}

void expect_peak_contract(const CleanedSignal& c) {
  for (std::size_t i = 0; i < c.r_peaks.size(); ++i) {
    EXPECT_LT(c.r_peaks[i], c.samples.size());
    if (i) EXPECT_GE(c.r_peaks[i] - c.r_peaks[i - 1], 100u);
  }
}

}  // namespace

// Reference magnitudes from scipy.signal.butter / iirnotch / sosfreqz.
TEST(Filters, HighpassMagnitudeMatchesReference) {
  const auto sos = butterworth_highpass(5, 0.5, kFs);
  ASSERT_EQ(sos.size(), 3u);
  const double f[] = {0.1, 0.25, 0.5, 1, 2, 5, 50, 100, 200};
  const double ref[] = {0.000319994930376025, 0.0312343674117431, 0.707106781189826, 0.999512124203458,
                        0.999999523398442,    0.999999999950133,  0.999999999999999, 1.0,
                        1.0};
  for (std::size_t k = 0; k < std::size(f); ++k)
    EXPECT_NEAR(magnitude_response(sos, f[k], kFs), ref[k], 1e-9 * std::max(1.0, ref[k]) + 1e-12) << f[k];
}

TEST(Filters, SecondOrderSectionsMatchReference) {
  const double f[] = {1, 5, 10, 15, 30, 100};
  const double hp[] = {0.03994283456554693, 0.7071067811865344, 0.97025507316964,
                       0.9939473518105618,  0.9996319132366147, 0.9999982497671439};
  const double lp[] = {0.9999902396092333, 0.9939473518105633, 0.9143076913358309,
                       0.707106781186548,  0.2384681052265492, 0.016925249993675753};
  const double lp3[] = {0.9922796845982724,    0.06381660213037689,    0.007969455897401095,
                        0.0023497296425992447, 0.00028591361421527987, 5.175055997388194e-06};
  const auto h = butterworth_highpass(2, 5, kFs), l = butterworth_lowpass(2, 15, kFs), l3 = butterworth_lowpass(3, 2, kFs);
  for (std::size_t k = 0; k < std::size(f); ++k) {
    EXPECT_NEAR(magnitude_response(h, f[k], kFs), hp[k], 1e-10);
    EXPECT_NEAR(magnitude_response(l, f[k], kFs), lp[k], 1e-10);
    EXPECT_NEAR(magnitude_response(l3, f[k], kFs), lp3[k], 1e-10 * std::max(1e-3, lp3[k]) * 1e3);
  }
}

TEST(Filters, NotchCoefficientsMatchReference) {
  const auto n50 = iir_notch(50, 30, kFs);
  EXPECT_NEAR(n50.b0, 0.9896361753628921, 1e-14);
  EXPECT_NEAR(n50.b1, -1.6012649682336106, 1e-14);
  EXPECT_NEAR(n50.b2, 0.9896361753628921, 1e-14);
  EXPECT_NEAR(n50.a1, -1.6012649682336106, 1e-14);
  EXPECT_NEAR(n50.a2, 0.9792723507257841, 1e-14);
  const auto n60 = iir_notch(60, 30, kFs);
  EXPECT_NEAR(n60.b0, 0.9875889380903247, 1e-14);
  EXPECT_NEAR(n60.b1, -1.4398427053125467, 1e-14);
  EXPECT_NEAR(n60.a2, 0.9751778761806493, 1e-14);

  const double f[] = {5, 40, 49, 50, 51, 60, 100};
  const double ref[] = {0.999993948335263, 0.997201110408508, 0.77097582144697, 5.55829468900757e-15,
                        0.765529370988079, 0.996013810958499, 0.999801663605323};
  for (std::size_t k = 0; k < std::size(f); ++k) EXPECT_NEAR(magnitude_response({n50}, f[k], kFs), ref[k], 1e-9);
}

// Values from scipy.signal.sosfiltfilt with the same cascade and default padding.
TEST(Filters, ZeroPhaseMatchesReference) {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / kFs;
    x[i] = 100 * std::sin(2 * std::numbers::pi * 1.3 * t) + 0.5 * static_cast<double>(i) +
           30 * std::sin(2 * std::numbers::pi * 50 * t);
  }
  const auto y = sosfiltfilt(cleaning_filter(50, kFs), x);
  const std::pair<std::size_t, double> ref[] = {{0, -22.786636271526667}, {1, -14.18594747775214},
                                                {17, -2.6350039140085038}, {250, -71.73532446994808},
                                                {500, 124.8301593073424},  {777, -38.942361568433505},
                                                {998, 20.26595331599482},  {999, 20.030467766191244}};
  for (auto [k, v] : ref) EXPECT_NEAR(y[k], v, 1e-7) << k;
}

TEST(Filters, ShortSignalRejected) {
  EXPECT_THROW(clean_signal(recording(std::vector<double>(20, 1.0))), InvalidInputError);
}

TEST(CleanSignal, ConstantInputRemoved) {
  const auto out = clean_signal(recording(std::vector<double>(5000, 300.0)));
  ASSERT_EQ(out.samples.size(), 5000u);
  EXPECT_TRUE(out.r_peaks.empty());
  for (std::size_t i = 250; i < 4750; ++i) ASSERT_LT(std::abs(out.samples[i]), 1.0) << i;
}

TEST(CleanSignal, PowerlineAttenuatedAtLeast20dB) {
  for (double line : {50.0, 60.0}) {
    const auto x = sinusoid(line, 100.0, 5000);
    const auto y = clean_signal(recording(x), line).samples;
    const double db = 20 * std::log10(rms(std::span(y).subspan(1000, 3000)) / rms(std::span(x).subspan(1000, 3000)));
    EXPECT_LE(db, -20.0) << line;
  }
}

TEST(CleanSignal, PassbandWithin1dB) {
  const auto x = sinusoid(5.0, 100.0, 5000);
  const auto y = clean_signal(recording(x)).samples;
  const double db = 20 * std::log10(rms(std::span(y).subspan(1000, 3000)) / rms(std::span(x).subspan(1000, 3000)));
  EXPECT_LE(std::abs(db), 1.0);
}

TEST(CleanSignal, RejectsBadInput) {
  auto x = sinusoid(5.0, 100.0, 5000);
  x[1234] = std::nan("");
  EXPECT_THROW(clean_signal(recording(x)), InvalidInputError);
  EXPECT_THROW(clean_signal(recording(sinusoid(5.0, 1.0, 5000)), 55.0), ContractError);
}

TEST(RPeaks, ImpulseTrain) {
  CleanedSignal c;
  c.samples = harness::impulse_train(5000, 500, 300, 1000.0);
  const auto out = detect_r_peaks(c);
  ASSERT_EQ(out.r_peaks.size(), 10u);
  for (std::size_t i = 1; i < out.r_peaks.size(); ++i)
    EXPECT_NEAR(static_cast<double>(out.r_peaks[i] - out.r_peaks[i - 1]), 500.0, 2.0);
}

TEST(RPeaks, AllZeroGivesNoPeaks) {
  CleanedSignal c;
  c.samples.assign(5000, 0.0);
  EXPECT_TRUE(detect_r_peaks(c).r_peaks.empty());
}

// Every generator beat in the detectable window is found within 10 ms, and no
// peak appears away from a generated beat.
TEST(RPeaks, SinusRhythmMatchesGeneratorBeats) {
  harness::SyntheticSpec spec;
  spec.sr.bpm_sd = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto syn = harness::synthesize_recording(spec, Label::SR, "sr", seed);
    const auto out = detect_r_peaks(clean_signal(syn.recording));
    expect_peak_contract(out);
    std::size_t expected = 0;
    for (double t : syn.beat_times_s) {
      if (t < 0.52 || t > 9.95) continue;
      ++expected;
      const auto want = static_cast<long>(std::lround(t * kFs));
      const bool found = std::any_of(out.r_peaks.begin(), out.r_peaks.end(),
                                     [&](std::size_t p) { return std::abs(static_cast<long>(p) - want) <= 5; });
      EXPECT_TRUE(found) << "seed " << seed << " beat at " << t;
    }
    for (std::size_t p : out.r_peaks) {
      const double tp = static_cast<double>(p) / kFs;
      const bool near_beat = std::any_of(syn.beat_times_s.begin(), syn.beat_times_s.end(),
                                         [&](double t) { return std::abs(t - tp) <= 0.01; });
      EXPECT_TRUE(near_beat) << "seed " << seed << " spurious peak at " << tp;
    }
    EXPECT_GE(out.r_peaks.size(), expected);
    EXPECT_LE(out.r_peaks.size(), expected + 1);
    EXPECT_GE(out.r_peaks.size(), 11u);
    EXPECT_LE(out.r_peaks.size(), 13u);
  }
}

TEST(RPeaks, ContractHoldsOnAllClassesAndNoise) {
  harness::SyntheticSpec spec;
  for (Label l : kAllLabels)
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const auto syn = harness::synthesize_recording(spec, l, "x", 100 + seed);
      expect_peak_contract(detect_r_peaks(clean_signal(syn.recording)));
    }
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x(5000);
    for (double& v : x) v = 50 * rng.normal();
    expect_peak_contract(detect_r_peaks(clean_signal(recording(x))));
  }
}

TEST(Segments, StrideTwoExample) {
  const auto ex = extract_rrr_segments(with_peaks(2000, {100, 500, 900, 1300, 1700}), "p", Label::SR);
  ASSERT_EQ(ex.segments.size(), 2u);
  EXPECT_EQ(ex.segments[0].start_sample, 100u);
  EXPECT_EQ(ex.segments[0].original_length, 800u);
  EXPECT_EQ(ex.segments[1].start_sample, 900u);
  EXPECT_EQ(ex.segments[1].original_length, 800u);
  EXPECT_EQ(ex.dropped_too_long, 0u);
}

TEST(Segments, TooFewPeaks) {
  EXPECT_TRUE(extract_rrr_segments(with_peaks(2000, {10, 400}), "p", Label::SR).segments.empty());
  EXPECT_TRUE(extract_rrr_segments(with_peaks(2000, {}), "p", Label::SR).segments.empty());
}

TEST(Segments, OverLengthDropped) {
  const auto ex = extract_rrr_segments(with_peaks(2000, {0, 900, 1600}), "p", Label::SR);
  EXPECT_TRUE(ex.segments.empty());
  EXPECT_EQ(ex.dropped_too_long, 1u);
}

TEST(Segments, RejectsUnsortedPeaks) {
  EXPECT_THROW(extract_rrr_segments(with_peaks(2000, {100, 90, 900}), "p", Label::SR), ContractError);
}

TEST(Segments, RoundTripAndDisjointInteriors) {
  harness::SyntheticSpec spec;
  for (Label l : kAllLabels)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto syn = harness::synthesize_recording(spec, l, "x", seed);
      const auto cleaned = detect_r_peaks(clean_signal(syn.recording));
      const auto ex = extract_rrr_segments(cleaned, "x", l);
      ASSERT_FALSE(ex.segments.empty());
      for (std::size_t k = 0; k < ex.segments.size(); ++k) {
        const auto& s = ex.segments[k];
        ASSERT_EQ(s.padded.size(), kSegmentLength);
        ASSERT_GE(s.original_length, 2u);
        for (std::size_t i = 0; i < s.original_length; ++i)
          ASSERT_EQ(s.padded[i], cleaned.samples[s.start_sample + i]);
        for (std::size_t i = s.original_length; i < kSegmentLength; ++i) ASSERT_EQ(s.padded[i], 0.0);
        if (k) EXPECT_GE(s.start_sample, ex.segments[k - 1].start_sample + ex.segments[k - 1].original_length);
      }
    }
}

TEST(Pad, PrefixPreservedAndZeroTail) {
  std::vector<double> x(800);
  Rng rng(1);
  for (double& v : x) v = rng.normal();
  const auto p = pad_segment(x);
  ASSERT_EQ(p.size(), 1500u);
  EXPECT_EQ(std::memcmp(p.data(), x.data(), 800 * sizeof(double)), 0);
  for (std::size_t i = 800; i < 1500; ++i) EXPECT_EQ(p[i], 0.0);
  std::vector<double> full(1500, 2.5);
  EXPECT_EQ(pad_segment(full), full);
  EXPECT_THROW(pad_segment(std::vector<double>(1501)), ContractError);
}

TEST(ZNormalize, MeanZeroStdOne) {
  Rng rng(9);
  std::vector<double> x(5000);
  for (double& v : x) v = std::exp(rng.normal()) * 40 + 7;
  const auto z = z_normalize_recording(recording(x)).samples;
  double mean = std::accumulate(z.begin(), z.end(), 0.0) / 5000.0, var = 0;
  for (double v : z) var += (v - mean) * (v - mean);
  EXPECT_LT(std::abs(mean), 1e-9);
  EXPECT_LT(std::abs(std::sqrt(var / 5000.0) - 1), 1e-9);
}

TEST(ZNormalize, AffineInvarianceAndArgmax) {
  Rng rng(10);
  std::vector<double> x(5000), y(5000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = 3.7 * x[i] - 120.0;
  }
  const auto zx = z_normalize_recording(recording(x)).samples;
  const auto zy = z_normalize_recording(recording(y)).samples;
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(zx[i], zy[i], 1e-9);
  EXPECT_EQ(std::max_element(zx.begin(), zx.end()) - zx.begin(), std::max_element(x.begin(), x.end()) - x.begin());
}

TEST(ZNormalize, ConstantIsDegenerate) {
  EXPECT_THROW(z_normalize_recording(recording(std::vector<double>(5000, 42.0))), DegenerateSignalError);
}

namespace {
RrrSegment seg_of(Label l, std::size_t len) {
  RrrSegment s;
  s.label = l;
  s.original_length = len;
  s.padded.assign(kSegmentLength, 0.0);
  return s;
}
}  // namespace

TEST(Histogram, SingleSegment) {
  const std::vector<RrrSegment> segs{seg_of(Label::AFIB, 400)};
  const auto h = length_histogram(segs, 100);
  const auto pct = h.percentages(Label::AFIB);
  for (std::size_t k = 0; k < h.bins(); ++k)
    EXPECT_DOUBLE_EQ(pct[k], h.edges[k] <= 400 && 400 < h.edges[k + 1] ? 100.0 : 0.0);
}

TEST(Histogram, TwoBins) {
  const std::vector<RrrSegment> segs{seg_of(Label::SR, 350), seg_of(Label::SR, 750)};
  const auto h = length_histogram(segs, 100);
  const auto pct = h.percentages(Label::SR);
  EXPECT_DOUBLE_EQ(pct[3], 50.0);
  EXPECT_DOUBLE_EQ(pct[7], 50.0);
  EXPECT_DOUBLE_EQ(std::accumulate(pct.begin(), pct.end(), 0.0), 100.0);
}

TEST(Histogram, EmptyInput) { EXPECT_TRUE(length_histogram({}, 50).empty()); }

TEST(Histogram, SyntheticCorpusModes) {
  const auto recs = harness::generate_synthetic(harness::SyntheticSpec{}, 10, 77);
  std::vector<RrrSegment> all;
  for (const auto& r : recs)
    for (auto& s : preprocess_recording(r).segments) all.push_back(std::move(s));
  const auto h = length_histogram(all, 50);
  for (Label l : kAllLabels) {
    const auto p = h.percentages(l);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 100.0, 1e-6);
  }
  EXPECT_GT(h.mode(Label::SB), h.mode(Label::SR));
}

namespace {
std::vector<double> rr_intervals(const harness::SyntheticSpec& spec, Label l, std::uint64_t seed) {
  const auto syn = harness::synthesize_recording(spec, l, "x", seed);
  const auto peaks = detect_r_peaks(clean_signal(syn.recording)).r_peaks;
  std::vector<double> rr;
  for (std::size_t i = 1; i < peaks.size(); ++i) rr.push_back(static_cast<double>(peaks[i] - peaks[i - 1]));
  return rr;
}

std::pair<double, double> mean_cv(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size())) / m};
}
}  // namespace

TEST(Synthetic, SinusRateGivesExpectedRR) {
  harness::SyntheticSpec spec;
  spec.sr.bpm_sd = 0;
  std::vector<double> rr;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (double v : rr_intervals(spec, Label::SR, seed)) rr.push_back(v);
  EXPECT_NEAR(mean_cv(rr).first, 400.0, 20.0);
}

TEST(Synthetic, FibrillationIsIrregular) {
  harness::SyntheticSpec spec;
  std::vector<double> af, sr;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = mean_cv(rr_intervals(spec, Label::AFIB, seed)).second;
    const auto s = mean_cv(rr_intervals(spec, Label::SR, seed)).second;
    af.push_back(a);
    sr.push_back(s);
  }
  EXPECT_GE(mean_cv(af).first, 2.0 * mean_cv(sr).first);
}

TEST(Synthetic, SegmentLengthsFollowRate) {
  harness::SyntheticSpec spec;
  spec.sb.bpm_sd = 0;
  spec.sr.bpm_sd = 0;
  auto mean_len = [&](Label l) {
    double s = 0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      auto r = harness::synthesize_recording(spec, l, "x", seed).recording;
      for (const auto& seg : preprocess_recording(r).segments) {
        s += static_cast<double>(seg.original_length);
        ++n;
      }
    }
    return s / static_cast<double>(n);
  };
  const double sb = mean_len(Label::SB), sr = mean_len(Label::SR);
  EXPECT_NEAR(sb, 1200.0, 60.0);
  EXPECT_NEAR(sr, 800.0, 40.0);
}

TEST(Synthetic, DeterministicPerSeedAndValid) {
  const auto a = harness::generate_synthetic(harness::SyntheticSpec{}, 3, 5);
  const auto b = harness::generate_synthetic(harness::SyntheticSpec{}, 3, 5);
  const auto c = harness::generate_synthetic(harness::SyntheticSpec{}, 3, 6);
  ASSERT_EQ(a.size(), 9u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].samples, b[i].samples);
    EXPECT_NE(a[i].samples, c[i].samples);
    EXPECT_NO_THROW(a[i].validate());
    EXPECT_EQ(a[i].samples.size(), 5000u);
  }
  harness::SyntheticSpec bad;
  bad.sr.bpm = 0;
  EXPECT_THROW(harness::generate_synthetic(bad, 1, 1), ContractError);
}
