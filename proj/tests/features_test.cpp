#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "test_util.hpp"

using namespace lfpstage;
using lfpstage::testing::TempDir;

namespace {

Segment fast_segment(std::uint64_t seed, std::size_t channels = 2) {
  auto rec = std::make_shared<const Recording>(lfpstage::testing::random_recording(channels, 15000, 500, seed));
  const std::vector<Label4> labels{Label4::REM};
  return reinterpret_rate(segment_recording(rec, labels)[1]);
}

// Dense naive-DFT log-mel energy for one frame and band.
double oracle_logmel(std::span<const float> x, std::size_t start, std::size_t len, int n_fft, double rate,
                     std::size_t n_bands, std::size_t band) {
  std::vector<double> frame(static_cast<std::size_t>(n_fft), 0.0);
  for (std::size_t i = 0; i < len; ++i)
    frame[i] = x[start + i] * (0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len)));
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double top = mel(rate / 2);
  const double lo = inv(top * static_cast<double>(band) / static_cast<double>(n_bands + 1));
  const double mid = inv(top * static_cast<double>(band + 1) / static_cast<double>(n_bands + 1));
  const double hi = inv(top * static_cast<double>(band + 2) / static_cast<double>(n_bands + 1));
  double energy = 0;
  for (int k = 0; k <= n_fft / 2; ++k) {
    const double f = k * rate / n_fft;
    double w = 0;
    if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
    else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
    if (w <= 0) continue;
    std::complex<double> acc = 0;
    for (int n = 0; n < n_fft; ++n) acc += frame[static_cast<std::size_t>(n)] * std::polar(1.0, -2 * std::numbers::pi * k * n / n_fft);
    energy += w * std::norm(acc) / static_cast<double>(len);
  }
  return std::log(std::max(energy, 1e-10));
}

}  // namespace

TEST(Surrogate, FrameArithmetic) {
  BackendConfig cfg;
  cfg.frame_len_s = 0.025;
  cfg.frame_hop_s = 0.020;
  EXPECT_EQ(surrogate_frame_count(cfg, 2500, 16000), 7u);
  EXPECT_EQ(surrogate_frame_count(BackendConfig{}, 2500, 16000), 22u);
  EXPECT_THROW(surrogate_frame_count(cfg, 399, 16000), data_error);
}

TEST(Surrogate, ShortSegmentRejected) {
  Segment s = fast_segment(1);
  s.length_samples = 300;
  EXPECT_THROW(extract_features(BackendConfig{}, s), data_error);
}

TEST(Surrogate, ShapeAndDeterminism) {
  const Segment s = fast_segment(2);
  const auto a = extract_features(BackendConfig{}, s);
  const auto b = extract_features(BackendConfig{}, s);
  EXPECT_EQ(a.n_channels, 2u);
  EXPECT_EQ(a.layers, 25u);
  EXPECT_EQ(a.frames, 22u);
  EXPECT_EQ(a.dim, 64u);
  EXPECT_EQ(a, b);
  for (float v : a.data) ASSERT_TRUE(std::isfinite(v));
}

TEST(Surrogate, LayerZeroMatchesNaiveDft) {
  BackendConfig cfg;
  cfg.n_layers = 1;
  cfg.dim = 16;
  const Segment s = fast_segment(3);
  const auto ft = extract_features(cfg, s);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t : {0u, 7u, 21u})
      for (std::size_t b : {0u, 5u, 15u})
        EXPECT_NEAR(ft.at(c, 0, t, b), oracle_logmel(s.channel(c), t * 100, 400, 512, 16000, 16, b), 1e-4)
            << "c=" << c << " t=" << t << " b=" << b;
}

TEST(Surrogate, LayersAreMovingAverages) {
  const Segment s = fast_segment(4, 1);
  const auto ft = extract_features(BackendConfig{}, s);
  const long T = static_cast<long>(ft.frames);
  for (std::size_t l : {1u, 3u, 24u}) {
    const long half = static_cast<long>(l);
    for (long t = 0; t < T; ++t)
      for (std::size_t k = 0; k < ft.dim; k += 7) {
        double sum = 0;
        for (long u = t - half; u <= t + half; ++u) sum += ft.at(0, 0, static_cast<std::size_t>(std::clamp(u, 0L, T - 1)), k);
        EXPECT_NEAR(ft.at(0, l, static_cast<std::size_t>(t), k), sum / static_cast<double>(2 * half + 1), 1e-4);
      }
  }
}

TEST(Smoothing, WidthOneIsIdentity) {
  std::vector<float> src{1, 2, 3, 4, 5, 6}, dst(6);
  detail::smooth_frames(src, dst, 3, 2, 0);
  EXPECT_EQ(src, dst);
}

TEST(Bandpower, OneFramePerSegment) {
  BackendConfig cfg = backend_from_json({{"kind", "bandpower_0_50"}});
  EXPECT_EQ(cfg.n_layers, 1u);
  EXPECT_EQ(cfg.dim, 50u);
  const auto ft = extract_features(cfg, fast_segment(5));
  EXPECT_EQ(ft.layers, 1u);
  EXPECT_EQ(ft.frames, 1u);
  EXPECT_EQ(ft.dim, 50u);
}

TEST(Bandpower, PeakLandsInItsBand) {
  Recording r;
  r.header = {"tone", 500, 1, 15000, "f32le"};
  r.samples.resize(15000);
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    r.samples[i] = static_cast<float>(std::sin(2 * std::numbers::pi * 10.4 * static_cast<double>(i) / 500.0));
  auto rec = std::make_shared<const Recording>(r);
  const std::vector<Label4> labels{Label4::Wake};
  const auto seg = reinterpret_rate(segment_recording(rec, labels)[0]);
  const auto ft = extract_features(backend_from_json({{"kind", "bandpower_0_50"}}), seg);
  std::size_t best = 0;
  for (std::size_t b = 1; b < ft.dim; ++b)
    if (ft.at(0, 0, 0, b) > ft.at(0, 0, 0, best)) best = b;
  EXPECT_EQ(best, 10u);
}

TEST(BackendConfig, JsonRoundTripAndErrors) {
  BackendConfig cfg;
  cfg.n_layers = 7;
  cfg.dim = 12;
  EXPECT_EQ(backend_from_json(backend_to_json(cfg)), cfg);
  EXPECT_THROW(backend_from_json({{"kind", "wavlm"}}), config_error);
  EXPECT_THROW(backend_from_json({{"kind", "surrogate_filterbank"}, {"hop", 1}}), config_error);
  EXPECT_THROW(backend_from_json({{"kind", "precomputed"}}), config_error);
  EXPECT_THROW(extract_features(backend_from_json({{"kind", "precomputed"}, {"feature_path", "x.featjson"}}),
                                fast_segment(1)),
               config_error);
}

TEST(FeatureFile, RoundTripIsBitExact) {
  TempDir dir;
  std::vector<FeatureTensor> ts;
  for (std::uint64_t s = 0; s < 3; ++s) {
    ts.push_back(lfpstage::testing::random_features(2, 3, 5, 4, s));
    ts.back().frame_hop_s = 0.00625;
    ts.back().frame_len_s = 0.025;
  }
  save_feature_file(dir / "f.featjson", dir / "f.feat", ts);
  EXPECT_EQ(load_feature_file(dir / "f.featjson", dir / "f.feat"), ts);
}

TEST(FeatureFile, TruncatedPayloadReportsByteCounts) {
  TempDir dir;
  const std::vector<FeatureTensor> ts{lfpstage::testing::random_features(2, 3, 5, 4, 1)};
  save_feature_file(dir / "f.featjson", dir / "f.feat", ts);
  auto bytes = io::read_bytes(dir / "f.feat");
  bytes.resize(bytes.size() - 3);
  io::write_bytes(dir / "f.feat", bytes);
  try {
    load_feature_file(dir / "f.featjson", dir / "f.feat");
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    EXPECT_NE(std::string(e.what()).find("expected 480 bytes, got 477"), std::string::npos) << e.what();
  }
}

TEST(FeatureFile, LargeLayerShapeAccepted) {
  TempDir dir;
  const std::vector<FeatureTensor> ts{lfpstage::testing::random_features(1, 25, 3, 1024, 9)};
  save_feature_file(dir / "f.featjson", dir / "f.feat", ts);
  const auto back = load_feature_file(dir / "f.featjson", dir / "f.feat");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].layers, 25u);
  EXPECT_EQ(back[0].dim, 1024u);
  EXPECT_EQ(back[0], ts[0]);
}

TEST(FeatureSource, PrecomputedLooksUpByIndex) {
  TempDir dir;
  const std::vector<FeatureTensor> ts{lfpstage::testing::random_features(2, 1, 3, 4, 1),
                                      lfpstage::testing::random_features(2, 1, 3, 4, 2)};
  save_feature_file(dir / "f.featjson", feature_payload_path(dir / "f.featjson"), ts);
  BackendConfig cfg;
  cfg.kind = BackendKind::Precomputed;
  cfg.feature_path = (dir / "f.featjson").string();
  const FeatureSource src(cfg);
  const Segment seg;
  EXPECT_EQ(src.get(seg, 1), ts[1]);
  EXPECT_THROW(src.get(seg, 2), data_error);
}

TEST(CombineLayers, SingleLayerIgnoresTheta) {
  const auto ft = lfpstage::testing::random_features(2, 1, 4, 3, 1);
  const auto out = combine_layers(LayerCombiner{{5.0}}, ft);
  for (std::size_t c = 0; c < 2; ++c)
    EXPECT_TRUE(out[c] == ft.layer_map(c, 0).cast<double>());
}

TEST(CombineLayers, EqualThetaGivesUniformWeights) {
  const LayerCombiner lc{std::vector<double>(25, 0.3)};
  for (double w : lc.weights()) EXPECT_NEAR(w, 0.04, 1e-15);
  const auto ft = lfpstage::testing::random_features(1, 25, 3, 2, 2);
  const auto out = combine_layers(lc, ft);
  double mean = 0;
  for (std::size_t l = 0; l < 25; ++l) mean += ft.at(0, l, 1, 1);
  EXPECT_NEAR(out[0](1, 1), mean / 25, 1e-12);
}

TEST(CombineLayers, LengthMismatchRejected) {
  const auto ft = lfpstage::testing::random_features(1, 3, 3, 2, 2);
  EXPECT_THROW(combine_layers(LayerCombiner{{0.0, 0.0}}, ft), data_error);
}

TEST(CombineLayers, SoftmaxShiftInvariant) {
  const std::vector<double> a{0.1, -2.0, 3.0}, b{100.1, 98.0, 103.0};
  const auto wa = LayerCombiner{a}.weights(), wb = LayerCombiner{b}.weights();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(wa[i], wb[i], 1e-12);
}

TEST(CombineLayers, BackwardMatchesFiniteDifference) {
  const auto ft = lfpstage::testing::random_features(2, 4, 3, 2, 4);
  const std::vector<double> theta{0.3, -0.2, 0.5, 0.0};
  // Loss: sum of combined features weighted by fixed coefficients.
  std::vector<Matrix<double>> coef(2);
  Rng rng(8);
  for (auto& m : coef) {
    m.resize(2, 3);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  }
  auto loss = [&](const std::vector<double>& th) {
    const auto out = combine_layers(LayerCombiner{th}, ft);
    double s = 0;
    for (std::size_t c = 0; c < 2; ++c) s += (out[c].array() * coef[c].array()).sum();
    return s;
  };
  const Vector<double> w = softmax<double>(Eigen::Map<const Vector<double>>(theta.data(), 4));
  const Vector<double> grad = combine_layers_backward<double>(w, ft, coef);
  for (std::size_t i = 0; i < 4; ++i) {
    auto up = theta, down = theta;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    EXPECT_NEAR(grad[static_cast<Eigen::Index>(i)], (loss(up) - loss(down)) / 2e-6, 1e-7);
  }
}
