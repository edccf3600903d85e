#pragma once

// Recordings, hypnograms, labeled 5 s segments, and the two train/test
// split protocols (stratified random and per-stream chronological).

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace lfpstage {

namespace fs = std::filesystem;

inline constexpr int kEpochSeconds = 30;
inline constexpr int kSegmentSeconds = 5;
inline constexpr int kSegmentsPerEpoch = kEpochSeconds / kSegmentSeconds;
inline constexpr std::size_t kNumClasses = 4;

struct RecordingHeader {
  std::string subject_id;
  int sample_rate_hz = 500;
  std::size_t n_channels = 8;
  std::size_t n_samples = 0;
  std::string dtype = "f32le";

  bool operator==(const RecordingHeader&) const = default;
};

// Channel-major sample matrix: channel c occupies
// samples[c * n_samples, (c + 1) * n_samples).
struct Recording {
  RecordingHeader header;
  std::vector<float> samples;

  std::span<const float> channel(std::size_t c) const {
    return std::span(samples).subspan(c * header.n_samples, header.n_samples);
  }
  std::span<float> channel(std::size_t c) {
    return std::span(samples).subspan(c * header.n_samples, header.n_samples);
  }

  bool operator==(const Recording&) const = default;
};

enum class Stage : std::uint8_t { W, N1, N2, N3, R };

inline std::string_view stage_code(Stage s) {
  static constexpr std::array<std::string_view, 5> codes{"W", "N1", "N2", "N3", "R"};
  return codes[static_cast<std::size_t>(s)];
}

struct Hypnogram {
  std::vector<Stage> epochs;
  bool operator==(const Hypnogram&) const = default;
};

// Four-class label after merging N2 and N3.
enum class Label4 : std::uint8_t { Wake = 0, N1 = 1, N2N3 = 2, REM = 3 };

inline constexpr std::array<std::string_view, kNumClasses> kClassNames{"Wake", "N1", "N2N3", "REM"};

inline constexpr std::size_t index(Label4 l) { return static_cast<std::size_t>(l); }

inline Label4 label_from_index(long v) {
  if (v < 0 || v >= static_cast<long>(kNumClasses))
    throw data_error("invalid class label " + std::to_string(v));
  return static_cast<Label4>(v);
}

// A 5 s window of one recording. The samples stay owned by the (shared)
// recording; `sample_rate_hz` is the nominal rate seen by feature
// extraction and may differ from the acquisition rate after
// reinterpret_rate().
struct Segment {
  std::string subject_id;
  std::size_t start_sample = 0;
  std::size_t length_samples = 0;
  Label4 label = Label4::Wake;
  std::size_t epoch_index = 0;
  int source_rate_hz = 0;
  int sample_rate_hz = 0;
  std::shared_ptr<const Recording> recording;

  std::size_t n_channels() const { return recording ? recording->header.n_channels : 0; }
  std::span<const float> channel(std::size_t c) const {
    return recording->channel(c).subspan(start_sample, length_samples);
  }
};

enum class SplitKind { Random, Chronological };

struct SplitSpec {
  SplitKind kind = SplitKind::Random;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<Segment> train;
  std::vector<Segment> test;
};

// ---------------------------------------------------------------------------
// Recording files: <name>.json header + <name>.f32 raw payload.

inline void validate(const RecordingHeader& h) {
  if (h.n_channels < 1) throw data_error("recording header: n_channels must be >= 1");
  if (h.n_samples < 1) throw data_error("recording header: n_samples must be >= 1");
  if (h.sample_rate_hz < 1) throw data_error("recording header: sample_rate_hz must be >= 1");
  if (h.dtype != "f32le") throw data_error("recording header: dtype must be \"f32le\"");
}

inline io::json header_to_json(const RecordingHeader& h) {
  return io::json{{"subject_id", h.subject_id},
                  {"sample_rate_hz", h.sample_rate_hz},
                  {"n_channels", h.n_channels},
                  {"n_samples", h.n_samples},
                  {"dtype", h.dtype}};
}

inline RecordingHeader header_from_json(const io::json& j) {
  const std::string what = "recording header";
  io::require_exact_keys(j, {"subject_id", "sample_rate_hz", "n_channels", "n_samples", "dtype"}, what);
  if (!j.at("subject_id").is_string()) throw data_error(what + ": subject_id must be a string");
  if (!j.at("dtype").is_string()) throw data_error(what + ": dtype must be a string");
  RecordingHeader h;
  h.subject_id = j.at("subject_id").get<std::string>();
  h.sample_rate_hz = io::get_positive_int<int>(j, "sample_rate_hz", what);
  h.n_channels = io::get_positive_int<std::size_t>(j, "n_channels", what);
  h.n_samples = io::get_positive_int<std::size_t>(j, "n_samples", what);
  h.dtype = j.at("dtype").get<std::string>();
  validate(h);
  return h;
}

inline Recording load_recording(const fs::path& header_path, const fs::path& raw_path) {
  Recording r;
  r.header = header_from_json(io::read_json(header_path));
  const auto bytes = io::read_bytes(raw_path);
  r.samples.resize(r.header.n_channels * r.header.n_samples);
  io::decode_f32le(bytes, r.samples, raw_path.string());
  return r;
}

inline void save_recording(const fs::path& header_path, const fs::path& raw_path, const Recording& r) {
  validate(r.header);
  if (r.samples.size() != r.header.n_channels * r.header.n_samples)
    throw data_error("recording: sample matrix does not match header dimensions");
  io::write_json(header_path, header_to_json(r.header));
  std::vector<unsigned char> bytes;
  bytes.reserve(r.samples.size() * 4);
  io::encode_f32le(r.samples, bytes);
  io::write_bytes(raw_path, bytes);
}

// ---------------------------------------------------------------------------
// Hypnogram CSV: optional header `epoch_index,stage`, one row per epoch.

inline Stage parse_stage(std::string_view code) {
  if (code == "W") return Stage::W;
  if (code == "N1") return Stage::N1;
  if (code == "N2") return Stage::N2;
  if (code == "N3") return Stage::N3;
  if (code == "R") return Stage::R;
  throw data_error("unknown stage '" + std::string(code) + "'");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

inline Hypnogram parse_hypnogram(std::string_view text) {
  std::vector<std::pair<std::size_t, Stage>> rows;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = detail::trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line == "epoch_index,stage") continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos)
      throw data_error("hypnogram line " + std::to_string(line_no) + ": expected 'epoch_index,stage'");
    const std::string_view idx_text = detail::trim(line.substr(0, comma));
    std::size_t idx = 0;
    const auto [ptr, ec] = std::from_chars(idx_text.data(), idx_text.data() + idx_text.size(), idx);
    if (ec != std::errc{} || ptr != idx_text.data() + idx_text.size())
      throw data_error("hypnogram line " + std::to_string(line_no) + ": bad epoch index");
    rows.emplace_back(idx, parse_stage(detail::trim(line.substr(comma + 1))));
  }
  if (rows.empty()) throw data_error("hypnogram is empty");
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Hypnogram h;
  h.epochs.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first < i) throw data_error("duplicate epoch " + std::to_string(rows[i].first));
    if (rows[i].first > i) throw data_error("missing epoch " + std::to_string(i));
    h.epochs.push_back(rows[i].second);
  }
  return h;
}

inline Hypnogram load_hypnogram(const fs::path& path) { return parse_hypnogram(io::read_text(path)); }

inline std::string format_hypnogram(const Hypnogram& h) {
  std::string out = "epoch_index,stage\n";
  for (std::size_t i = 0; i < h.epochs.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += stage_code(h.epochs[i]);
    out += '\n';
  }
  return out;
}

inline void save_hypnogram(const fs::path& path, const Hypnogram& h) {
  if (h.epochs.empty()) throw data_error("hypnogram is empty");
  io::write_text(path, format_hypnogram(h));
}

inline Label4 merge_stage(Stage s) {
  switch (s) {
    case Stage::W: return Label4::Wake;
    case Stage::N1: return Label4::N1;
    case Stage::N2:
    case Stage::N3: return Label4::N2N3;
    case Stage::R: return Label4::REM;
  }
  throw data_error("invalid stage");
}

inline std::vector<Label4> merge_stages(const Hypnogram& h) {
  if (h.epochs.empty()) throw data_error("hypnogram is empty");
  std::vector<Label4> out;
  out.reserve(h.epochs.size());
  for (Stage s : h.epochs) out.push_back(merge_stage(s));
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation.

// Cuts every complete labeled 30 s epoch into six 5 s segments. Labels past
// the end of the recording are dropped, with one warning appended to
// `warnings` when given.
inline std::vector<Segment> segment_recording(std::shared_ptr<const Recording> r,
                                              std::span<const Label4> labels,
                                              std::vector<std::string>* warnings = nullptr) {
  if (!r) throw data_error("segment_recording: null recording");
  const int rate = r->header.sample_rate_hz;
  if (rate < 1) throw data_error("segment_recording: sample rate must be positive");
  const auto seg_len = static_cast<std::size_t>(rate) * kSegmentSeconds;
  const std::size_t epoch_len = seg_len * kSegmentsPerEpoch;
  const std::size_t full_epochs = r->header.n_samples / epoch_len;
  const std::size_t usable = std::min(full_epochs, labels.size());
  if (usable < labels.size() && warnings) {
    warnings->push_back(r->header.subject_id + ": dropped " + std::to_string(labels.size() - usable) +
                        " labeled epoch(s) not fully covered by the recording");
  }
  std::vector<Segment> out;
  out.reserve(usable * kSegmentsPerEpoch);
  for (std::size_t e = 0; e < usable; ++e) {
    for (int k = 0; k < kSegmentsPerEpoch; ++k) {
      Segment s;
      s.subject_id = r->header.subject_id;
      s.start_sample = e * epoch_len + static_cast<std::size_t>(k) * seg_len;
      s.length_samples = seg_len;
      s.label = labels[e];
      s.epoch_index = e;
      s.source_rate_hz = rate;
      s.sample_rate_hz = rate;
      s.recording = r;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits.

// Round half to even, treating products within 1e-9 of a half as exact
// halves so that decimal fractions like 0.9 behave as written.
inline std::size_t train_count(double fraction, std::size_t n) {
  const double x = fraction * static_cast<double>(n);
  const double lo = std::floor(x);
  const double diff = x - lo;
  const double tol = 1e-9 * std::max(1.0, x);
  std::size_t base = static_cast<std::size_t>(lo);
  if (std::abs(diff - 0.5) <= tol) return base % 2 == 0 ? base : base + 1;
  return diff > 0.5 ? base + 1 : base;
}

inline void validate(const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw config_error("train_fraction must lie in (0, 1)");
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

namespace detail {

inline SplitIndices partition(std::span<const char> in_train) {
  SplitIndices out;
  for (std::size_t i = 0; i < in_train.size(); ++i) (in_train[i] ? out.train : out.test).push_back(i);
  return out;
}

inline Split gather(std::span<const Segment> segments, const SplitIndices& idx) {
  Split out;
  for (auto i : idx.train) out.train.push_back(segments[i]);
  for (auto i : idx.test) out.test.push_back(segments[i]);
  return out;
}

}  // namespace detail

// Stratified per label: each label's segments are shuffled with a stream
// derived from (seed, label) and the first round(fraction * n) go to train.
// Indices come back in ascending order.
inline SplitIndices split_random_indices(std::span<const Segment> segments, const SplitSpec& spec) {
  validate(spec);
  std::vector<char> in_train(segments.size(), 0);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < segments.size(); ++i)
      if (index(segments[i].label) == c) members.push_back(i);
    if (members.empty()) continue;
    Rng rng(derive_seed(spec.seed, c));
    rng.shuffle(std::span(members));
    const std::size_t k = train_count(spec.train_fraction, members.size());
    for (std::size_t j = 0; j < k; ++j) in_train[members[j]] = 1;
  }
  return detail::partition(in_train);
}

// Per (subject, label) stream, the earliest round(fraction * n) segments by
// start_sample go to train. Indices come back in ascending order.
inline SplitIndices split_chronological_indices(std::span<const Segment> segments, const SplitSpec& spec) {
  validate(spec);
  std::map<std::pair<std::string, std::size_t>, std::vector<std::size_t>> streams;
  for (std::size_t i = 0; i < segments.size(); ++i)
    streams[{segments[i].subject_id, index(segments[i].label)}].push_back(i);
  std::vector<char> in_train(segments.size(), 0);
  for (auto& [key, members] : streams) {
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return segments[a].start_sample < segments[b].start_sample;
    });
    const std::size_t k = train_count(spec.train_fraction, members.size());
    for (std::size_t j = 0; j < k; ++j) in_train[members[j]] = 1;
  }
  return detail::partition(in_train);
}

inline SplitIndices split_indices(std::span<const Segment> segments, const SplitSpec& spec) {
  return spec.kind == SplitKind::Random ? split_random_indices(segments, spec)
                                        : split_chronological_indices(segments, spec);
}

inline Split split_random(std::span<const Segment> segments, const SplitSpec& spec) {
  return detail::gather(segments, split_random_indices(segments, spec));
}

inline Split split_chronological(std::span<const Segment> segments, const SplitSpec& spec) {
  return detail::gather(segments, split_chronological_indices(segments, spec));
}

inline std::array<std::size_t, kNumClasses> label_counts(std::span<const Segment> segments) {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& s : segments) ++counts[index(s.label)];
  return counts;
}

}  // namespace lfpstage
