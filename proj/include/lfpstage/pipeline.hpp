#pragma once

// Dataset directories: one <name>.json / <name>.f32 / <name>.csv triple per
// subject. Loading applies the 0.5 Hz high-pass per channel, cuts labeled
// 5 s segments at the acquisition rate and relabels them to the 16 kHz
// nominal rate.

#include <algorithm>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dataset_io.hpp"
#include "dsp.hpp"
#include "error.hpp"

namespace lfpstage {

struct Dataset {
  std::vector<Segment> segments;
  std::vector<std::string> warnings;
};

inline std::vector<Segment> prepare_segments(const Recording& raw, const Hypnogram& hyp, std::size_t threads = 1,
                                             std::vector<std::string>* warnings = nullptr) {
  auto filtered = std::make_shared<const Recording>(highpass_recording(raw, kHighpassCutoffHz, threads));
  const auto labels = merge_stages(hyp);
  auto segments = segment_recording(filtered, labels, warnings);
  for (auto& s : segments) s = reinterpret_rate(std::move(s), kSpeechRateHz);
  return segments;
}

inline void save_subject(const fs::path& dir, const Recording& rec, const Hypnogram& hyp) {
  fs::create_directories(dir);
  const std::string stem = rec.header.subject_id;
  save_recording(dir / (stem + ".json"), dir / (stem + ".f32"), rec);
  save_hypnogram(dir / (stem + ".csv"), hyp);
}

// Subjects are loaded in file-name order.
inline Dataset load_dataset(const fs::path& dir, std::size_t threads = 1) {
  if (!fs::is_directory(dir)) throw data_error("data directory not found: " + dir.string());
  std::vector<fs::path> headers;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (entry.is_regular_file() && p.extension() == ".json" && fs::exists(fs::path(p).replace_extension(".f32")))
      headers.push_back(p);
  }
  std::sort(headers.begin(), headers.end());
  if (headers.empty()) throw data_error("no recordings (<name>.json + <name>.f32) in " + dir.string());
  Dataset ds;
  for (const auto& h : headers) {
    const auto raw = fs::path(h).replace_extension(".f32");
    const auto hyp_path = fs::path(h).replace_extension(".csv");
    if (!fs::exists(hyp_path)) throw data_error("missing hypnogram " + hyp_path.string());
    const Recording rec = load_recording(h, raw);
    auto segs = prepare_segments(rec, load_hypnogram(hyp_path), threads, &ds.warnings);
    ds.segments.insert(ds.segments.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
  }
  return ds;
}

}  // namespace lfpstage
