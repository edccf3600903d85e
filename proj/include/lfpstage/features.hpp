#pragma once

// Layered per-channel feature tensors.
//
// Three backends produce tensors of shape [channels x layers x frames x dim]:
//   - Precomputed: tensors read from a .featjson/.feat pair, indexed by
//     segment order (the ingestion point for externally computed features).
//   - SurrogateFilterbank: log mel-band STFT energies at the nominal speech
//     rate; layer l is the layer-0 map smoothed along time with a centred
//     moving average of width 2l+1.
//   - Bandpower050: one layer, one frame, log band powers of equal sub-bands
//     of 0-50 Hz at the acquisition rate.

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>

#include "binary_io.hpp"
#include "dataset_io.hpp"
#include "error.hpp"
#include "math.hpp"

namespace lfpstage {

struct FeatureTensor {
  std::size_t n_channels = 0;
  std::size_t layers = 0;
  std::size_t frames = 0;
  std::size_t dim = 0;
  double frame_hop_s = 0;
  double frame_len_s = 0;
  std::vector<float> data;  // [channel][layer][frame][dim]

  std::size_t map_size() const { return frames * dim; }
  std::size_t offset(std::size_t c, std::size_t l) const { return (c * layers + l) * map_size(); }

  float& at(std::size_t c, std::size_t l, std::size_t t, std::size_t k) {
    return data[offset(c, l) + t * dim + k];
  }
  float at(std::size_t c, std::size_t l, std::size_t t, std::size_t k) const {
    return data[offset(c, l) + t * dim + k];
  }

  // One (channel, layer) map viewed as a dim x frames matrix (column = frame).
  Eigen::Map<const Matrix<float>> layer_map(std::size_t c, std::size_t l) const {
    return {data.data() + offset(c, l), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(frames)};
  }

  bool same_shape(const FeatureTensor& o) const {
    return n_channels == o.n_channels && layers == o.layers && frames == o.frames && dim == o.dim;
  }

  bool operator==(const FeatureTensor&) const = default;
};

inline FeatureTensor make_feature_tensor(std::size_t n_channels, std::size_t layers, std::size_t frames,
                                         std::size_t dim) {
  FeatureTensor ft;
  ft.n_channels = n_channels;
  ft.layers = layers;
  ft.frames = frames;
  ft.dim = dim;
  ft.data.assign(n_channels * layers * frames * dim, 0.0f);
  return ft;
}

inline void validate(const FeatureTensor& ft) {
  if (ft.n_channels < 1 || ft.layers < 1 || ft.frames < 1 || ft.dim < 1)
    throw data_error("feature tensor dimensions must be >= 1");
  if (ft.data.size() != ft.n_channels * ft.layers * ft.frames * ft.dim)
    throw data_error("feature tensor payload does not match its dimensions");
  for (std::size_t i = 0; i < ft.data.size(); ++i)
    if (!std::isfinite(ft.data[i])) throw numeric_error("non-finite feature value at element " + std::to_string(i));
}

enum class BackendKind { Precomputed, SurrogateFilterbank, Bandpower050 };

inline std::string to_string(BackendKind k) {
  switch (k) {
    case BackendKind::Precomputed: return "precomputed";
    case BackendKind::SurrogateFilterbank: return "surrogate_filterbank";
    case BackendKind::Bandpower050: return "bandpower_0_50";
  }
  return "?";
}

inline BackendKind backend_kind_from_string(const std::string& s) {
  if (s == "precomputed") return BackendKind::Precomputed;
  if (s == "surrogate_filterbank") return BackendKind::SurrogateFilterbank;
  if (s == "bandpower_0_50") return BackendKind::Bandpower050;
  throw config_error("unknown feature backend '" + s + "'");
}

struct BackendConfig {
  BackendKind kind = BackendKind::SurrogateFilterbank;
  std::size_t n_layers = 25;
  std::size_t dim = 64;
  // Timing at the reinterpreted (nominal) rate. At 16 kHz the defaults are a
  // 400-sample frame and a 100-sample hop, giving 22 frames per 5 s segment.
  double frame_len_s = 0.025;
  double frame_hop_s = 0.00625;
  // Band-power edges in Hz at the acquisition rate.
  double band_lo_hz = 0.0;
  double band_hi_hz = 50.0;
  // Header path of a .featjson file (Precomputed only).
  std::string feature_path;

  bool operator==(const BackendConfig&) const = default;
};

inline constexpr double kLogFloor = 1e-10;

inline void validate(const BackendConfig& cfg) {
  if (cfg.kind == BackendKind::Precomputed) {
    if (cfg.feature_path.empty()) throw config_error("precomputed backend needs feature_path");
    return;
  }
  if (cfg.dim < 1) throw config_error("backend dim must be >= 1");
  if (cfg.kind == BackendKind::Bandpower050) {
    if (cfg.n_layers != 1) throw config_error("bandpower_0_50 backend has exactly one layer");
    if (!(cfg.band_lo_hz >= 0.0 && cfg.band_hi_hz > cfg.band_lo_hz)) throw config_error("invalid band edges");
    return;
  }
  if (cfg.n_layers < 1) throw config_error("backend n_layers must be >= 1");
  if (!(cfg.frame_len_s > 0.0 && cfg.frame_hop_s > 0.0)) throw config_error("frame timing must be positive");
}

inline io::json backend_to_json(const BackendConfig& cfg) {
  io::json j{{"kind", to_string(cfg.kind)}, {"n_layers", cfg.n_layers}, {"dim", cfg.dim}};
  if (cfg.kind == BackendKind::SurrogateFilterbank) {
    j["frame_len_s"] = cfg.frame_len_s;
    j["frame_hop_s"] = cfg.frame_hop_s;
  } else if (cfg.kind == BackendKind::Bandpower050) {
    j["band_lo_hz"] = cfg.band_lo_hz;
    j["band_hi_hz"] = cfg.band_hi_hz;
  } else {
    j["feature_path"] = cfg.feature_path;
  }
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected.
inline BackendConfig backend_from_json(const io::json& j) {
  if (!j.is_object()) throw config_error("backend config must be an object");
  BackendConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") {
      cfg.kind = backend_kind_from_string(value.get<std::string>());
    } else if (key == "n_layers") {
      cfg.n_layers = value.get<std::size_t>();
    } else if (key == "dim") {
      cfg.dim = value.get<std::size_t>();
    } else if (key == "frame_len_s") {
      cfg.frame_len_s = value.get<double>();
    } else if (key == "frame_hop_s") {
      cfg.frame_hop_s = value.get<double>();
    } else if (key == "band_lo_hz") {
      cfg.band_lo_hz = value.get<double>();
    } else if (key == "band_hi_hz") {
      cfg.band_hi_hz = value.get<double>();
    } else if (key == "feature_path") {
      cfg.feature_path = value.get<std::string>();
    } else {
      throw config_error("backend config: unknown key '" + key + "'");
    }
  }
  if (cfg.kind == BackendKind::Bandpower050 && !j.contains("n_layers")) cfg.n_layers = 1;
  if (cfg.kind == BackendKind::Bandpower050 && !j.contains("dim")) cfg.dim = 50;
  validate(cfg);
  return cfg;
}

inline std::uint64_t backend_hash(const BackendConfig& cfg) { return fnv1a64(backend_to_json(cfg).dump()); }

// ---------------------------------------------------------------------------
// Spectral helpers.

namespace detail {

// Real-to-complex FFTW plans, created once per size. Planning is not
// thread-safe in FFTW, execution on separate arrays is.
inline fftw_plan r2c_plan(int n) {
  static std::mutex mutex;
  static std::map<int, fftw_plan> plans;
  std::lock_guard lock(mutex);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<double> in(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> out(static_cast<std::size_t>(n / 2 + 1));
  fftw_plan p = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans.emplace(n, p);
  return p;
}

// Power spectrum |X_k|^2 / n_window of a windowed, zero-padded frame.
inline void power_spectrum(std::span<const double> windowed, int n_fft, std::vector<double>& in,
                           std::vector<std::complex<double>>& out, std::vector<double>& power) {
  in.assign(static_cast<std::size_t>(n_fft), 0.0);
  std::copy(windowed.begin(), windowed.end(), in.begin());
  out.resize(static_cast<std::size_t>(n_fft / 2 + 1));
  fftw_execute_dft_r2c(r2c_plan(n_fft), in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  power.resize(out.size());
  const double scale = 1.0 / static_cast<double>(windowed.size());
  for (std::size_t k = 0; k < out.size(); ++k) power[k] = std::norm(out[k]) * scale;
}

inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

struct BandFilter {
  std::size_t first_bin = 0;
  std::vector<double> weights;  // over bins [first_bin, first_bin + weights.size())
};

// Triangular mel filters over [0, rate/2]. A band too narrow to cover any
// bin takes the bin nearest its centre.
inline std::vector<BandFilter> mel_filterbank(std::size_t n_bands, int n_fft, double rate) {
  const std::size_t n_bins = static_cast<std::size_t>(n_fft / 2 + 1);
  const double mel_hi = hz_to_mel(rate / 2.0);
  std::vector<double> edges(n_bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(n_bands + 1));
  const double bin_hz = rate / n_fft;
  std::vector<BandFilter> bank(n_bands);
  for (std::size_t b = 0; b < n_bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    BandFilter& f = bank[b];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double freq = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (freq > lo && freq <= mid) w = (freq - lo) / (mid - lo);
      else if (freq > mid && freq < hi) w = (hi - freq) / (hi - mid);
      if (w <= 0.0) continue;
      if (f.weights.empty()) f.first_bin = k;
      f.weights.resize(k - f.first_bin + 1, 0.0);
      f.weights.back() = w;
    }
    if (f.weights.empty()) {
      f.first_bin = std::min(static_cast<std::size_t>(std::lround(mid / bin_hz)), n_bins - 1);
      f.weights = {1.0};
    }
  }
  return bank;
}

inline int next_pow2(std::size_t n) {
  int p = 1;
  while (static_cast<std::size_t>(p) < n) p <<= 1;
  return p;
}

// Centred moving average of width 2*half+1 along frames with replicate
// padding. src and dst are [frames][dim].
inline void smooth_frames(std::span<const float> src, std::span<float> dst, std::size_t frames, std::size_t dim,
                          std::size_t half) {
  if (half == 0) {
    std::copy(src.begin(), src.end(), dst.begin());
    return;
  }
  const double width = static_cast<double>(2 * half + 1);
  std::vector<double> prefix(frames + 1);
  for (std::size_t k = 0; k < dim; ++k) {
    prefix[0] = 0.0;
    for (std::size_t t = 0; t < frames; ++t) prefix[t + 1] = prefix[t] + src[t * dim + k];
    const double first = src[k];
    const double last = src[(frames - 1) * dim + k];
    for (std::size_t t = 0; t < frames; ++t) {
      const long lo = static_cast<long>(t) - static_cast<long>(half);
      const long hi = static_cast<long>(t) + static_cast<long>(half);
      const std::size_t in_lo = static_cast<std::size_t>(std::max(lo, 0L));
      const std::size_t in_hi = static_cast<std::size_t>(std::min(hi, static_cast<long>(frames) - 1));
      double sum = prefix[in_hi + 1] - prefix[in_lo];
      if (lo < 0) sum += static_cast<double>(-lo) * first;
      if (hi > static_cast<long>(frames) - 1) sum += static_cast<double>(hi - static_cast<long>(frames) + 1) * last;
      dst[t * dim + k] = static_cast<float>(sum / width);
    }
  }
}

}  // namespace detail

// Number of STFT frames the surrogate backend yields for `n` samples.
inline std::size_t surrogate_frame_count(const BackendConfig& cfg, std::size_t n_samples, int rate_hz) {
  const auto len = static_cast<std::size_t>(std::lround(cfg.frame_len_s * rate_hz));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.frame_hop_s * rate_hz));
  if (len < 1 || hop < 1) throw config_error("frame length and hop must cover at least one sample");
  if (n_samples < len)
    throw data_error("segment of " + std::to_string(n_samples) + " samples is shorter than one frame (" +
                     std::to_string(len) + " samples)");
  return (n_samples - len) / hop + 1;
}

inline FeatureTensor extract_surrogate(const BackendConfig& cfg, const Segment& seg) {
  const int rate = seg.sample_rate_hz;
  const std::size_t frames = surrogate_frame_count(cfg, seg.length_samples, rate);
  const auto len = static_cast<std::size_t>(std::lround(cfg.frame_len_s * rate));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.frame_hop_s * rate));
  const int n_fft = detail::next_pow2(len);
  const auto window = detail::hann(len);
  const auto bank = detail::mel_filterbank(cfg.dim, n_fft, rate);

  FeatureTensor ft = make_feature_tensor(seg.n_channels(), cfg.n_layers, frames, cfg.dim);
  ft.frame_len_s = cfg.frame_len_s;
  ft.frame_hop_s = cfg.frame_hop_s;

  std::vector<double> frame(len), fft_in, power;
  std::vector<std::complex<double>> fft_out;
  for (std::size_t c = 0; c < ft.n_channels; ++c) {
    const auto x = seg.channel(c);
    float* base = ft.data.data() + ft.offset(c, 0);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t i = 0; i < len; ++i) frame[i] = static_cast<double>(x[t * hop + i]) * window[i];
      detail::power_spectrum(frame, n_fft, fft_in, fft_out, power);
      for (std::size_t b = 0; b < cfg.dim; ++b) {
        double e = 0.0;
        const auto& filter = bank[b];
        for (std::size_t k = 0; k < filter.weights.size(); ++k) e += filter.weights[k] * power[filter.first_bin + k];
        base[t * cfg.dim + b] = static_cast<float>(std::log(std::max(e, kLogFloor)));
      }
    }
    const std::span<const float> layer0(base, ft.map_size());
    for (std::size_t l = 1; l < cfg.n_layers; ++l)
      detail::smooth_frames(layer0, std::span(ft.data.data() + ft.offset(c, l), ft.map_size()), frames, cfg.dim, l);
  }
  return ft;
}

inline FeatureTensor extract_bandpower(const BackendConfig& cfg, const Segment& seg) {
  const std::size_t n = seg.length_samples;
  const double rate = seg.source_rate_hz;
  if (!(cfg.band_hi_hz <= rate / 2.0)) throw config_error("band-power upper edge exceeds Nyquist");
  const auto window = detail::hann(n);
  FeatureTensor ft = make_feature_tensor(seg.n_channels(), 1, 1, cfg.dim);
  ft.frame_len_s = static_cast<double>(n) / seg.sample_rate_hz;
  ft.frame_hop_s = ft.frame_len_s;
  const double bin_hz = rate / static_cast<double>(n);
  const double width = (cfg.band_hi_hz - cfg.band_lo_hz) / static_cast<double>(cfg.dim);

  std::vector<double> frame(n), fft_in, power;
  std::vector<std::complex<double>> fft_out;
  for (std::size_t c = 0; c < ft.n_channels; ++c) {
    const auto x = seg.channel(c);
    for (std::size_t i = 0; i < n; ++i) frame[i] = static_cast<double>(x[i]) * window[i];
    detail::power_spectrum(frame, static_cast<int>(n), fft_in, fft_out, power);
    for (std::size_t b = 0; b < cfg.dim; ++b) {
      const double lo = cfg.band_lo_hz + width * static_cast<double>(b);
      const double hi = b + 1 == cfg.dim ? cfg.band_hi_hz : lo + width;
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t k = 0; k < power.size(); ++k) {
        const double f = static_cast<double>(k) * bin_hz;
        if (f >= lo && (f < hi || (b + 1 == cfg.dim && f <= hi))) {
          sum += power[k];
          ++count;
        }
      }
      if (count == 0) {
        const auto k = std::min(static_cast<std::size_t>(std::lround((lo + hi) / 2.0 / bin_hz)), power.size() - 1);
        sum = power[k];
        count = 1;
      }
      ft.at(c, 0, 0, b) = static_cast<float>(std::log(std::max(sum / static_cast<double>(count), kLogFloor)));
    }
  }
  return ft;
}

inline FeatureTensor extract_features(const BackendConfig& cfg, const Segment& seg) {
  validate(cfg);
  if (!seg.recording) throw data_error("segment has no samples");
  switch (cfg.kind) {
    case BackendKind::SurrogateFilterbank: return extract_surrogate(cfg, seg);
    case BackendKind::Bandpower050: return extract_bandpower(cfg, seg);
    case BackendKind::Precomputed:
      throw config_error("precomputed features are looked up by segment index; use FeatureSource");
  }
  throw config_error("unknown backend");
}

// ---------------------------------------------------------------------------
// Feature files: <name>.featjson header + <name>.feat payload.

inline void save_feature_file(const fs::path& header_path, const fs::path& payload_path,
                              std::span<const FeatureTensor> tensors) {
  if (tensors.empty()) throw data_error("feature file needs at least one tensor");
  const FeatureTensor& first = tensors.front();
  std::vector<unsigned char> bytes;
  bytes.reserve(tensors.size() * first.data.size() * 4);
  for (const auto& t : tensors) {
    validate(t);
    if (!t.same_shape(first)) throw data_error("feature file tensors must share one shape");
    io::encode_f32le(t.data, bytes);
  }
  io::json header{{"n_segments", tensors.size()}, {"n_channels", first.n_channels}, {"n_layers", first.layers},
                  {"n_frames", first.frames},     {"dim", first.dim},                {"dtype", "f32le"},
                  {"frame_hop_s", first.frame_hop_s}, {"frame_len_s", first.frame_len_s}};
  io::write_json(header_path, header);
  io::write_bytes(payload_path, bytes);
}

inline std::vector<FeatureTensor> load_feature_file(const fs::path& header_path, const fs::path& payload_path) {
  const std::string what = "feature header " + header_path.string();
  const io::json h = io::read_json(header_path);
  io::require_exact_keys(
      h, {"n_segments", "n_channels", "n_layers", "n_frames", "dim", "dtype", "frame_hop_s", "frame_len_s"}, what);
  if (h.at("dtype") != "f32le") throw data_error(what + ": dtype must be \"f32le\"");
  const auto n_segments = io::get_positive_int<std::size_t>(h, "n_segments", what);
  FeatureTensor proto = make_feature_tensor(io::get_positive_int<std::size_t>(h, "n_channels", what),
                                            io::get_positive_int<std::size_t>(h, "n_layers", what),
                                            io::get_positive_int<std::size_t>(h, "n_frames", what),
                                            io::get_positive_int<std::size_t>(h, "dim", what));
  if (!h.at("frame_hop_s").is_number() || !h.at("frame_len_s").is_number())
    throw data_error(what + ": frame timing must be numeric");
  proto.frame_hop_s = h.at("frame_hop_s").get<double>();
  proto.frame_len_s = h.at("frame_len_s").get<double>();

  const auto bytes = io::read_bytes(payload_path);
  const std::size_t per_tensor = proto.data.size() * 4;
  const std::size_t expected = per_tensor * n_segments;
  if (bytes.size() != expected)
    throw data_error(payload_path.string() + ": size mismatch: expected " + std::to_string(expected) +
                     " bytes, got " + std::to_string(bytes.size()));
  std::vector<FeatureTensor> out(n_segments, proto);
  for (std::size_t s = 0; s < n_segments; ++s) {
    io::decode_f32le(std::span(bytes).subspan(s * per_tensor, per_tensor), out[s].data, payload_path.string(),
                     s * per_tensor);
  }
  return out;
}

// Replaces the extension of a header path to find its payload.
inline fs::path feature_payload_path(const fs::path& header_path) {
  fs::path p = header_path;
  return p.replace_extension(".feat");
}

// Resolves a segment to its feature tensor for any backend.
class FeatureSource {
 public:
  explicit FeatureSource(BackendConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    if (cfg_.kind == BackendKind::Precomputed) {
      const fs::path header = cfg_.feature_path;
      tensors_ = std::make_shared<const std::vector<FeatureTensor>>(
          load_feature_file(header, feature_payload_path(header)));
    }
  }

  const BackendConfig& config() const { return cfg_; }

  // `segment_index` is the segment's position in the full dataset order;
  // only the precomputed backend uses it.
  FeatureTensor get(const Segment& seg, std::size_t segment_index) const {
    if (cfg_.kind != BackendKind::Precomputed) return extract_features(cfg_, seg);
    if (segment_index >= tensors_->size())
      throw data_error("no precomputed features for segment " + std::to_string(segment_index) + " (file holds " +
                       std::to_string(tensors_->size()) + ")");
    return (*tensors_)[segment_index];
  }

 private:
  BackendConfig cfg_;
  std::shared_ptr<const std::vector<FeatureTensor>> tensors_;
};

// ---------------------------------------------------------------------------
// Layer fusion.

struct LayerCombiner {
  std::vector<double> theta;

  std::vector<double> weights() const { return softmax(std::span<const double>(theta)); }
};

// Per channel, sum_l softmax(theta)_l * layer_l, as dim x frames matrices.
template <typename S>
std::vector<Matrix<S>> combine_layers(const Vector<S>& layer_weights, const FeatureTensor& ft) {
  if (static_cast<std::size_t>(layer_weights.size()) != ft.layers)
    throw data_error("layer weight count " + std::to_string(layer_weights.size()) + " does not match " +
                     std::to_string(ft.layers) + " feature layers");
  std::vector<Matrix<S>> out(ft.n_channels);
  for (std::size_t c = 0; c < ft.n_channels; ++c) {
    out[c] = layer_weights[0] * ft.layer_map(c, 0).template cast<S>();
    for (std::size_t l = 1; l < ft.layers; ++l)
      out[c].noalias() += layer_weights[static_cast<Eigen::Index>(l)] * ft.layer_map(c, l).template cast<S>();
  }
  return out;
}

// Gradient with respect to the (pre-softmax) logits given dL/d(out).
template <typename S>
Vector<S> combine_layers_backward(const Vector<S>& layer_weights, const FeatureTensor& ft,
                                  const std::vector<Matrix<S>>& d_out) {
  Vector<S> d_weights = Vector<S>::Zero(layer_weights.size());
  for (std::size_t c = 0; c < ft.n_channels; ++c)
    for (std::size_t l = 0; l < ft.layers; ++l)
      d_weights[static_cast<Eigen::Index>(l)] += (d_out[c].array() * ft.layer_map(c, l).template cast<S>().array()).sum();
  return softmax_backward(layer_weights, d_weights);
}

inline std::vector<Matrix<double>> combine_layers(const LayerCombiner& lc, const FeatureTensor& ft) {
  if (lc.theta.size() != ft.layers)
    throw data_error("layer combiner has " + std::to_string(lc.theta.size()) + " logits for " +
                     std::to_string(ft.layers) + " feature layers");
  const Vector<double> theta = Eigen::Map<const Vector<double>>(lc.theta.data(), static_cast<Eigen::Index>(lc.theta.size()));
  return combine_layers<double>(softmax(theta), ft);
}

}  // namespace lfpstage
