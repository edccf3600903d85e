#pragma once

// Seeded synthetic multichannel LFP with stage-dependent spectra.
//
// Informative channels mix band-limited noise streams whose per-epoch gains
// depend on the stage:
//
//   Wake   20-30 Hz beta, 8-12 Hz alpha, low overall amplitude
//   N1     continuous 4-7 Hz theta
//   N2/N3  high-amplitude 0.5-4 Hz delta plus 12-14 Hz spindle bursts
//          (N3: more delta, fewer spindles)
//   REM    low-amplitude 4-7 Hz theta in 1-2 s bursts plus weak beta
//
// Every other channel is white noise. All channels share one 1/f background.
// With drift > 0 the informative content slides toward 1.5x higher
// frequencies and the noise grows over the night.
//
// Random streams are std::mt19937_64 keyed by splitmix64(seed, purpose), so
// output is identical across platforms.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dataset_io.hpp"
#include "dsp.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace lfpstage {

struct SynthConfig {
  // Epoch counts for Wake, N1, N2/N3, REM.
  std::array<std::size_t, kNumClasses> epochs_per_stage{200, 200, 200, 200};
  int sample_rate_hz = 500;
  std::size_t n_channels = 8;
  std::set<std::size_t> informative_channels{3};
  double signal_amplitude = 1.0;
  double noise_std = 1.0;
  double background_amplitude = 1.0;
  double drift = 0.0;
  std::size_t n_subjects = 1;
  std::uint64_t seed = 7;
};

inline void validate(const SynthConfig& c) {
  if (c.sample_rate_hz < 100) throw config_error("synth: sample_rate_hz must be >= 100");
  if (c.n_channels < 1) throw config_error("synth: n_channels must be >= 1");
  if (c.informative_channels.empty()) throw config_error("synth: informative_channels must be non-empty");
  if (*c.informative_channels.rbegin() >= c.n_channels)
    throw config_error("synth: informative channel index out of range");
  std::size_t total = 0;
  for (auto e : c.epochs_per_stage) total += e;
  if (total == 0) throw config_error("synth: no epochs requested");
  if (!(c.signal_amplitude >= 0.0 && c.noise_std >= 0.0 && c.background_amplitude >= 0.0 && c.drift >= 0.0))
    throw config_error("synth: amplitudes and drift must be non-negative");
  if (c.n_subjects < 1) throw config_error("synth: n_subjects must be >= 1");
}

inline io::json synth_config_to_json(const SynthConfig& c) {
  return io::json{{"epochs_per_stage", c.epochs_per_stage},
                  {"sample_rate_hz", c.sample_rate_hz},
                  {"n_channels", c.n_channels},
                  {"informative_channels", c.informative_channels},
                  {"signal_amplitude", c.signal_amplitude},
                  {"noise_std", c.noise_std},
                  {"background_amplitude", c.background_amplitude},
                  {"drift", c.drift},
                  {"n_subjects", c.n_subjects},
                  {"seed", c.seed}};
}

// Missing keys take defaults; unknown keys are rejected.
inline SynthConfig synth_config_from_json(const io::json& j) {
  if (!j.is_object()) throw config_error("synth config must be a JSON object");
  SynthConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs_per_stage") {
        if (value.is_number_integer()) c.epochs_per_stage.fill(value.get<std::size_t>());
        else {
          const auto v = value.get<std::vector<std::size_t>>();
          if (v.size() != kNumClasses) throw config_error("synth: epochs_per_stage needs 4 entries");
          std::copy(v.begin(), v.end(), c.epochs_per_stage.begin());
        }
      } else if (key == "sample_rate_hz") c.sample_rate_hz = value.get<int>();
      else if (key == "n_channels") c.n_channels = value.get<std::size_t>();
      else if (key == "informative_channels") c.informative_channels = value.get<std::set<std::size_t>>();
      else if (key == "signal_amplitude") c.signal_amplitude = value.get<double>();
      else if (key == "noise_std") c.noise_std = value.get<double>();
      else if (key == "background_amplitude") c.background_amplitude = value.get<double>();
      else if (key == "drift") c.drift = value.get<double>();
      else if (key == "n_subjects") c.n_subjects = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw config_error("synth config: unknown key '" + key + "'");
    }
  } catch (const io::json::exception& e) {
    throw config_error(std::string("synth config: ") + e.what());
  }
  validate(c);
  return c;
}

namespace synth_detail {

enum Band : std::size_t { Delta, Theta, Alpha, Sigma, Beta, kBands };

inline constexpr std::array<std::pair<double, double>, kBands> kBandEdges{{
    {0.5, 4.0}, {4.0, 7.0}, {8.0, 12.0}, {12.0, 14.0}, {20.0, 30.0}}};

// RMS gain of each band per stage: W, N1, N2, N3, R.
inline constexpr std::array<std::array<double, kBands>, 5> kStageGains{{
    {0.2, 0.2, 0.8, 0.0, 1.0},  // W
    {0.4, 1.5, 0.2, 0.0, 0.3},  // N1
    {3.0, 0.3, 0.2, 1.5, 0.1},  // N2
    {4.0, 0.3, 0.2, 0.7, 0.1},  // N3
    {0.3, 0.7, 0.1, 0.0, 0.5},  // R
}};

enum StreamKey : std::uint64_t { kHypnogram = 1, kWhite = 2, kBackground = 3, kBand = 4, kBursts = 5 };

inline std::uint64_t key(std::uint64_t purpose, std::uint64_t a = 0, std::uint64_t b = 0) {
  return splitmix64(purpose * 0x9e3779b97f4a7c15ULL ^ splitmix64(a * 1315423911ULL + b));
}

// Unit-RMS band-limited Gaussian noise: white noise through two cascaded
// band-pass sections.
inline std::vector<double> band_noise(double lo, double hi, double rate, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal();
  const double center = std::sqrt(std::max(lo, 0.25) * hi);
  const double q = center / (hi - lo);
  const BiquadCoeffs bp = design_bandpass(center, q, rate);
  x = filter_channel(bp, std::span<const double>(x));
  x = filter_channel(bp, std::span<const double>(x));
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(n));
  if (rms > 0.0)
    for (auto& v : x) v /= rms;
  return x;
}

// Unit-RMS approximately 1/f noise (Kellet's economy pinking filter).
inline std::vector<double> pink_noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  double b0 = 0, b1 = 0, b2 = 0;
  for (auto& v : x) {
    const double w = rng.normal();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    v = b0 + b1 + b2 + w * 0.1848;
  }
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (auto& v : x) {
    v -= mean;
    ss += v * v;
  }
  const double rms = std::sqrt(ss / static_cast<double>(n));
  if (rms > 0.0)
    for (auto& v : x) v /= rms;
  return x;
}

// On/off envelope of Hann-tapered bursts within [0, len).
inline void add_bursts(std::vector<double>& env, std::size_t begin, std::size_t len, double rate, Rng& rng,
                       int min_count, int max_count, double min_s, double max_s) {
  const int count = min_count + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_count - min_count + 1)));
  for (int b = 0; b < count; ++b) {
    const auto dur = static_cast<std::size_t>(rng.uniform(min_s, max_s) * rate);
    if (dur >= len) continue;
    const std::size_t start = begin + static_cast<std::size_t>(rng.below(len - dur));
    for (std::size_t i = 0; i < dur; ++i) {
      const double taper = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(dur));
      env[start + i] = std::max(env[start + i], taper);
    }
  }
}

}  // namespace synth_detail

// Stage sequence built from shuffled runs of 2-8 epochs per stage; runs of
// the merged class are scored N2 or N3 at random.
inline Hypnogram synth_hypnogram(const SynthConfig& cfg, std::size_t subject) {
  using namespace synth_detail;
  Rng rng(derive_seed(cfg.seed, key(kHypnogram, subject)));
  struct Run {
    Stage stage;
    std::size_t length;
  };
  std::vector<Run> runs;
  constexpr std::array<Stage, kNumClasses> base{Stage::W, Stage::N1, Stage::N2, Stage::R};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t left = cfg.epochs_per_stage[c];
    while (left > 0) {
      const std::size_t len = std::min<std::size_t>(left, 2 + rng.below(7));
      Stage s = base[c];
      if (s == Stage::N2 && rng.below(2) == 1) s = Stage::N3;
      runs.push_back({s, len});
      left -= len;
    }
  }
  rng.shuffle(std::span(runs));
  Hypnogram h;
  for (const auto& r : runs) h.epochs.insert(h.epochs.end(), r.length, r.stage);
  return h;
}

inline std::string synth_subject_id(std::size_t subject) {
  std::string id = std::to_string(subject + 1);
  return "synth" + std::string(id.size() < 2 ? 2 - id.size() : 0, '0') + id;
}

inline std::pair<Recording, Hypnogram> generate(const SynthConfig& cfg, std::size_t subject = 0) {
  using namespace synth_detail;
  validate(cfg);
  Hypnogram hyp = synth_hypnogram(cfg, subject);
  const double rate = cfg.sample_rate_hz;
  const std::size_t epoch_len = static_cast<std::size_t>(cfg.sample_rate_hz) * kEpochSeconds;
  const std::size_t n = hyp.epochs.size() * epoch_len;

  Recording rec;
  rec.header.subject_id = synth_subject_id(subject);
  rec.header.sample_rate_hz = cfg.sample_rate_hz;
  rec.header.n_channels = cfg.n_channels;
  rec.header.n_samples = n;
  rec.samples.assign(cfg.n_channels * n, 0.0f);

  // Night progress in [0, 1] drives drift.
  auto progress = [n](std::size_t i) { return static_cast<double>(i) / static_cast<double>(n); };
  auto noise_scale = [&](std::size_t i) { return 1.0 + cfg.drift * progress(i); };

  const auto background = pink_noise(n, derive_seed(cfg.seed, key(kBackground, subject)));

  for (std::size_t ch = 0; ch < cfg.n_channels; ++ch) {
    std::vector<double> x(n, 0.0);
    const bool informative = cfg.informative_channels.contains(ch);
    if (informative) {
      // Burst envelopes: spindles in N2/N3, theta bursts in REM.
      std::vector<double> spindle_env(n, 0.0), rem_env(n, 0.0);
      Rng burst_rng(derive_seed(cfg.seed, key(kBursts, subject, ch)));
      for (std::size_t e = 0; e < hyp.epochs.size(); ++e) {
        const Stage s = hyp.epochs[e];
        if (s == Stage::N2) add_bursts(spindle_env, e * epoch_len, epoch_len, rate, burst_rng, 4, 7, 0.5, 1.5);
        if (s == Stage::N3) add_bursts(spindle_env, e * epoch_len, epoch_len, rate, burst_rng, 1, 3, 0.5, 1.5);
        if (s == Stage::R) add_bursts(rem_env, e * epoch_len, epoch_len, rate, burst_rng, 6, 10, 1.0, 2.0);
      }
      for (std::size_t b = 0; b < kBands; ++b) {
        const auto [lo, hi] = kBandEdges[b];
        const auto stream = band_noise(lo, hi, rate, n, derive_seed(cfg.seed, key(kBand, subject, ch * 16 + b)));
        std::vector<double> shifted;
        if (cfg.drift > 0.0)
          shifted = band_noise(1.5 * lo, 1.5 * hi, rate, n, derive_seed(cfg.seed, key(kBand, subject, ch * 16 + b + 8)));
        for (std::size_t i = 0; i < n; ++i) {
          const Stage s = hyp.epochs[i / epoch_len];
          double gain = kStageGains[static_cast<std::size_t>(s)][b];
          if (gain == 0.0) continue;
          if (b == Sigma) gain *= spindle_env[i];
          if (b == Theta && s == Stage::R) gain *= rem_env[i];
          double v = stream[i];
          if (cfg.drift > 0.0) {
            const double mix = std::min(1.0, cfg.drift * progress(i));
            v = (1.0 - mix) * v + mix * shifted[i];
          }
          x[i] += cfg.signal_amplitude * gain * v;
        }
      }
    }
    Rng white(derive_seed(cfg.seed, key(kWhite, subject, ch)));
    const double white_std = informative ? 0.25 * cfg.noise_std : cfg.noise_std;
    auto out = rec.channel(ch);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x[i] + white_std * noise_scale(i) * white.normal() + cfg.background_amplitude * background[i];
      out[i] = static_cast<float>(v);
    }
  }
  return {std::move(rec), std::move(hyp)};
}

}  // namespace lfpstage
