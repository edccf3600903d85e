#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"

using namespace lfpstage;

namespace {

// Steady-state gain of the filter at `freq` measured by driving it with a
// sinusoid and correlating the tail against sin/cos.
double measured_gain(const BiquadCoeffs& c, double freq, double seconds) {
  const double rate = c.sample_rate_hz;
  const auto n = static_cast<std::size_t>(seconds * rate);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * freq * static_cast<double>(i) / rate);
  const auto y = filter_channel(c, x);
  // Integrate over the last 10 whole periods.
  const auto period = static_cast<std::size_t>(std::lround(rate / freq));
  const std::size_t span = 10 * period;
  double s = 0, co = 0;
  for (std::size_t i = n - span; i < n; ++i) {
    const double ph = 2 * std::numbers::pi * freq * static_cast<double>(i) / rate;
    s += y[i] * std::sin(ph);
    co += y[i] * std::cos(ph);
  }
  return 2.0 * std::hypot(s, co) / static_cast<double>(span);
}

}  // namespace

TEST(Highpass, DcNullAndStable) {
  const auto c = design_highpass(0.5, 500);
  EXPECT_TRUE(is_stable(c));
  EXPECT_NEAR(magnitude_response(c, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(c.b0 + c.b1 + c.b2, 0.0, 1e-15);
  EXPECT_NEAR(magnitude_response(c, 250.0), 1.0, 1e-12);
}

TEST(Highpass, MinusThreeDbAtCutoff) {
  const auto c = design_highpass(0.5, 500);
  const double db = 20 * std::log10(magnitude_response(c, 0.5));
  EXPECT_NEAR(db, -10 * std::log10(2.0), 0.1);
  const double measured_db = 20 * std::log10(measured_gain(c, 0.5, 200));
  EXPECT_NEAR(measured_db, -10 * std::log10(2.0), 0.1);
}

TEST(Highpass, PassbandNearUnity) {
  const auto c = design_highpass(0.5, 500);
  EXPECT_NEAR(measured_gain(c, 10.0, 20), 1.0, 1e-3);
}

TEST(Highpass, NyquistViolationRejected) {
  EXPECT_THROW(design_highpass(300, 500), config_error);
  EXPECT_THROW(design_highpass(250, 500), config_error);
  EXPECT_THROW(design_highpass(0, 500), config_error);
}

TEST(FilterChannel, ConstantInputDecays) {
  const auto c = design_highpass(0.5, 500);
  const std::vector<float> x(10000, 1.0f);
  const auto y = filter_channel(c, x);
  EXPECT_LT(std::abs(y[9999]), 1e-3);
}

TEST(FilterChannel, LinearAndTimeInvariant) {
  const auto c = design_highpass(0.5, 500);
  Rng rng(3);
  std::vector<double> a(4000), b(4000), sum(4000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    sum[i] = 2.5 * a[i] - 0.75 * b[i];
  }
  const auto ya = filter_channel(c, a), yb = filter_channel(c, b), ys = filter_channel(c, sum);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(ys[i], 2.5 * ya[i] - 0.75 * yb[i], 1e-9);

  std::vector<double> delayed(a.size() + 100, 0.0);
  std::copy(a.begin(), a.end(), delayed.begin() + 100);
  const auto yd = filter_channel(c, delayed);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(yd[i], 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(yd[i + 100], ya[i]);
}

TEST(FilterChannel, NonFiniteInputNamesIndex) {
  const auto c = design_highpass(0.5, 500);
  std::vector<float> x(10, 0.0f);
  x[7] = std::numeric_limits<float>::infinity();
  try {
    filter_channel(c, x);
    FAIL() << "expected numeric_error";
  } catch (const numeric_error& e) {
    EXPECT_NE(std::string(e.what()).find("index 7"), std::string::npos);
  }
}

TEST(FilterRecording, IndependentOfThreads) {
  const Recording r = lfpstage::testing::random_recording(8, 5000, 500, 5);
  EXPECT_EQ(highpass_recording(r, 0.5, 1), highpass_recording(r, 0.5, 4));
  const Recording f = highpass_recording(r);
  const auto c = design_highpass(0.5, 500);
  const auto ch3 = filter_channel(c, r.channel(3));
  EXPECT_TRUE(std::equal(ch3.begin(), ch3.end(), f.channel(3).begin()));
}

TEST(Reinterpret, RelabelsRateOnly) {
  const Recording r = lfpstage::testing::random_recording(2, 2500, 500, 5);
  const Recording fast = reinterpret_rate(r);
  EXPECT_EQ(fast.samples, r.samples);
  EXPECT_EQ(fast.header.sample_rate_hz, 16000);
  EXPECT_EQ(reinterpret_rate(fast), fast);
  // Playback speed-up and the new segment duration.
  EXPECT_EQ(fast.header.sample_rate_hz / r.header.sample_rate_hz, 32);
  EXPECT_DOUBLE_EQ(static_cast<double>(fast.header.n_samples) / fast.header.sample_rate_hz, 2500.0 / 16000.0);
  EXPECT_THROW(reinterpret_rate(r, 0), config_error);
}

TEST(Reinterpret, SegmentKeepsSourceRate) {
  auto rec = std::make_shared<const Recording>(lfpstage::testing::random_recording(1, 15000, 500, 5));
  const std::vector<Label4> labels{Label4::Wake};
  const auto seg = reinterpret_rate(segment_recording(rec, labels)[0]);
  EXPECT_EQ(seg.sample_rate_hz, 16000);
  EXPECT_EQ(seg.source_rate_hz, 500);
  EXPECT_EQ(seg.length_samples, 2500u);
}
