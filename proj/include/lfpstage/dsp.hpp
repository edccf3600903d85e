#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dataset_io.hpp"
#include "error.hpp"
#include "parallel.hpp"

namespace lfpstage {

inline constexpr int kSpeechRateHz = 16000;
inline constexpr double kHighpassCutoffHz = 0.5;

// Normalized biquad (a0 = 1).
struct BiquadCoeffs {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  double cutoff_hz = 0;
  double sample_rate_hz = 0;
};

inline double pole_radius(const BiquadCoeffs& c) {
  // Roots of z^2 + a1 z + a2.
  const std::complex<double> disc = std::sqrt(std::complex<double>(c.a1 * c.a1 - 4.0 * c.a2, 0.0));
  const auto r1 = (-c.a1 + disc) / 2.0;
  const auto r2 = (-c.a1 - disc) / 2.0;
  return std::max(std::abs(r1), std::abs(r2));
}

inline bool is_stable(const BiquadCoeffs& c) { return pole_radius(c) < 1.0; }

// |H(e^{jw})| at frequency f.
inline double magnitude_response(const BiquadCoeffs& c, double freq_hz) {
  const double w = 2.0 * std::numbers::pi * freq_hz / c.sample_rate_hz;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  return std::abs((c.b0 + c.b1 * z1 + c.b2 * z2) / (1.0 + c.a1 * z1 + c.a2 * z2));
}

// Second-order Butterworth high-pass, bilinear transform with the cutoff
// prewarped so the -3 dB point lands exactly on cutoff_hz.
inline BiquadCoeffs design_highpass(double cutoff_hz, double sample_rate_hz) {
  if (!(cutoff_hz > 0.0)) throw config_error("high-pass cutoff must be positive");
  if (!(sample_rate_hz > 2.0 * cutoff_hz))
    throw config_error("high-pass cutoff " + std::to_string(cutoff_hz) + " Hz is not below Nyquist for " +
                       std::to_string(sample_rate_hz) + " Hz");
  const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate_hz);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  BiquadCoeffs c;
  c.b0 = norm;
  c.b1 = -2.0 * norm;
  c.b2 = norm;
  c.a1 = 2.0 * (k2 - 1.0) * norm;
  c.a2 = (1.0 - std::numbers::sqrt2 * k + k2) * norm;
  c.cutoff_hz = cutoff_hz;
  c.sample_rate_hz = sample_rate_hz;
  if (!is_stable(c)) throw numeric_error("designed high-pass filter is unstable");
  return c;
}

// RBJ constant-peak band-pass; used by the synthetic generator.
inline BiquadCoeffs design_bandpass(double center_hz, double q, double sample_rate_hz) {
  if (!(center_hz > 0.0 && center_hz < sample_rate_hz / 2.0)) throw config_error("band-pass center out of range");
  if (!(q > 0.0)) throw config_error("band-pass Q must be positive");
  const double w0 = 2.0 * std::numbers::pi * center_hz / sample_rate_hz;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  BiquadCoeffs c;
  c.b0 = alpha / a0;
  c.b1 = 0.0;
  c.b2 = -alpha / a0;
  c.a1 = -2.0 * std::cos(w0) / a0;
  c.a2 = (1.0 - alpha) / a0;
  c.cutoff_hz = center_hz;
  c.sample_rate_hz = sample_rate_hz;
  return c;
}

// Causal direct-form-II-transposed filtering from zero state. Arithmetic is
// done in double regardless of the sample type.
template <typename T>
std::vector<T> filter_channel(const BiquadCoeffs& c, std::span<const T> x) {
  std::vector<T> y(x.size());
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double in = static_cast<double>(x[i]);
    if (!std::isfinite(in)) throw numeric_error("non-finite input sample at index " + std::to_string(i));
    const double out = c.b0 * in + s1;
    s1 = c.b1 * in - c.a1 * out + s2;
    s2 = c.b2 * in - c.a2 * out;
    y[i] = static_cast<T>(out);
  }
  return y;
}

template <typename T>
std::vector<T> filter_channel(const BiquadCoeffs& c, const std::vector<T>& x) {
  return filter_channel(c, std::span<const T>(x));
}

// Applies the same filter to every channel of a recording.
inline Recording filter_recording(const BiquadCoeffs& c, const Recording& r, std::size_t threads = 1) {
  Recording out;
  out.header = r.header;
  out.samples.resize(r.samples.size());
  parallel_for(r.header.n_channels, threads, [&](std::size_t ch) {
    const auto y = filter_channel(c, r.channel(ch));
    std::copy(y.begin(), y.end(), out.channel(ch).begin());
  });
  return out;
}

inline Recording highpass_recording(const Recording& r, double cutoff_hz = kHighpassCutoffHz,
                                    std::size_t threads = 1) {
  return filter_recording(design_highpass(cutoff_hz, r.header.sample_rate_hz), r, threads);
}

// Relabels the sampling rate without touching sample values, so that the
// signal plays back faster (500 Hz -> 16 kHz is a 32x speed-up).
inline Recording reinterpret_rate(Recording r, int new_rate_hz = kSpeechRateHz) {
  if (new_rate_hz < 1) throw config_error("sample rate must be positive");
  r.header.sample_rate_hz = new_rate_hz;
  return r;
}

inline Segment reinterpret_rate(Segment s, int new_rate_hz = kSpeechRateHz) {
  if (new_rate_hz < 1) throw config_error("sample rate must be positive");
  s.sample_rate_hz = new_rate_hz;
  return s;
}

}  // namespace lfpstage
