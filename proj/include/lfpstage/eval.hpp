#pragma once

#include <array>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "dataset_io.hpp"
#include "error.hpp"
#include "features.hpp"
#include "model.hpp"
#include "training.hpp"

namespace lfpstage {

// Rows are true labels, columns predictions.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }
  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < kNumClasses; ++i) n += counts[i][i];
    return n;
  }
  std::size_t row_sum(std::size_t r) const {
    std::size_t n = 0;
    for (auto c : counts[r]) n += c;
    return n;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size())
    throw data_error("confusion_matrix: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  if (preds.empty()) throw data_error("confusion_matrix: no predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= kNumClasses || labels[i] >= kNumClasses) throw data_error("confusion_matrix: label out of range");
    ++cm.counts[labels[i]][preds[i]];
  }
  return cm;
}

struct Metrics {
  double total_accuracy = 0;
  // Recall per true class; empty when the class has no samples.
  std::array<std::optional<double>, kNumClasses> per_class_recall;
};

inline Metrics metrics(const ConfusionMatrix& cm) {
  Metrics m;
  const std::size_t total = cm.total();
  m.total_accuracy = total == 0 ? 0.0 : static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t row = cm.row_sum(c);
    if (row > 0) m.per_class_recall[c] = static_cast<double>(cm.counts[c][c]) / static_cast<double>(row);
  }
  return m;
}

// Majority vote over one epoch's segment predictions. Ties go to the tied
// class with the highest mean predicted probability, then the lowest index.
inline std::size_t epoch_vote(std::span<const std::size_t> preds,
                              std::span<const std::array<double, kNumClasses>> probs = {}) {
  if (preds.empty()) throw data_error("epoch_vote: no segments");
  std::array<std::size_t, kNumClasses> votes{};
  for (auto p : preds) {
    if (p >= kNumClasses) throw data_error("epoch_vote: label out of range");
    ++votes[p];
  }
  std::array<double, kNumClasses> mean_prob{};
  for (const auto& pr : probs)
    for (std::size_t c = 0; c < kNumClasses; ++c) mean_prob[c] += pr[c];
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && mean_prob[c] > mean_prob[best])) best = c;
  }
  return best;
}

struct Report {
  ConfusionMatrix confusion;
  Metrics segment;
  ConfusionMatrix epoch_confusion;
  Metrics epoch;
  std::map<std::string, std::vector<double>> channel_weights;  // per-subject mean alpha
  std::vector<double> layer_weights;
};

inline std::vector<double> layer_weight_report(const ModelParams<float>& m) {
  const auto logits = m.tensor(slot::kLayerLogits);
  return softmax(std::span<const double>(std::vector<double>(logits.begin(), logits.end())));
}

// Mean attention weights per subject over the given forward results.
inline std::map<std::string, std::vector<double>> channel_weights_from(std::span<const ForwardResult<float>> results,
                                                                       std::span<const Segment> segments,
                                                                       std::span<const std::size_t> indices) {
  std::map<std::string, std::vector<double>> sums;
  std::map<std::string, std::size_t> counts;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& subject = segments[indices[i]].subject_id;
    auto& acc = sums[subject];
    const auto& alpha = results[i].alpha;
    if (acc.empty()) acc.assign(static_cast<std::size_t>(alpha.size()), 0.0);
    if (acc.size() != static_cast<std::size_t>(alpha.size()))
      throw data_error("subject " + subject + " has segments with different channel counts");
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += alpha[static_cast<Eigen::Index>(c)];
    ++counts[subject];
  }
  for (auto& [subject, acc] : sums)
    for (double& v : acc) v /= static_cast<double>(counts[subject]);
  return sums;
}

inline std::map<std::string, std::vector<double>> channel_weight_report(const ModelParams<float>& m,
                                                                        const FeatureSource& source,
                                                                        std::span<const Segment> segments,
                                                                        std::span<const std::size_t> indices,
                                                                        std::size_t threads = 1) {
  const auto results = predict(m, source, segments, indices, threads);
  return channel_weights_from(results, segments, indices);
}

inline Report build_report(const ModelParams<float>& m, std::span<const ForwardResult<float>> results,
                           std::span<const Segment> segments, std::span<const std::size_t> indices) {
  Report r;
  std::vector<std::size_t> preds, labels;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    preds.push_back(results[i].predicted());
    labels.push_back(index(segments[indices[i]].label));
  }
  r.confusion = confusion_matrix(preds, labels);
  r.segment = metrics(r.confusion);

  // Group by (subject, epoch) in first-seen order.
  std::map<std::tuple<std::string, std::size_t>, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& seg = segments[indices[i]];
    auto [it, inserted] = group_of.try_emplace({seg.subject_id, seg.epoch_index}, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  std::vector<std::size_t> epoch_preds, epoch_labels;
  for (const auto& g : groups) {
    std::vector<std::size_t> p;
    std::vector<std::array<double, kNumClasses>> pr;
    for (auto i : g) {
      p.push_back(preds[i]);
      std::array<double, kNumClasses> a{};
      for (std::size_t c = 0; c < kNumClasses; ++c) a[c] = results[i].probs[static_cast<Eigen::Index>(c)];
      pr.push_back(a);
    }
    epoch_preds.push_back(epoch_vote(p, pr));
    epoch_labels.push_back(labels[g.front()]);
  }
  r.epoch_confusion = confusion_matrix(epoch_preds, epoch_labels);
  r.epoch = metrics(r.epoch_confusion);
  r.channel_weights = channel_weights_from(results, segments, indices);
  r.layer_weights = layer_weight_report(m);
  return r;
}

// ---------------------------------------------------------------------------
// Exports.

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true/pred";
  for (auto name : kClassNames) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    out << kClassNames[r];
    for (auto c : cm.counts[r]) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

inline std::string layer_weights_csv(std::span<const double> w) {
  std::ostringstream out;
  out.precision(9);
  out << "layer,weight\n";
  for (std::size_t l = 0; l < w.size(); ++l) out << l << ',' << w[l] << '\n';
  return out.str();
}

inline std::string channel_weights_csv(const std::map<std::string, std::vector<double>>& w) {
  std::ostringstream out;
  out.precision(9);
  std::size_t n_ch = w.empty() ? 0 : w.begin()->second.size();
  out << "subject_id";
  for (std::size_t c = 0; c < n_ch; ++c) out << ",ch" << c;
  out << '\n';
  for (const auto& [subject, alpha] : w) {
    out << subject;
    for (double a : alpha) out << ',' << a;
    out << '\n';
  }
  return out.str();
}

inline io::json metrics_json(const Metrics& m, const ConfusionMatrix& cm) {
  io::json recall = io::json::object();
  io::json empty = io::json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::string name(kClassNames[c]);
    if (m.per_class_recall[c]) recall[name] = *m.per_class_recall[c];
    else {
      recall[name] = nullptr;
      empty.push_back(name);
    }
  }
  return io::json{{"total_accuracy", m.total_accuracy},
                  {"per_class_recall", recall},
                  {"empty_classes", empty},
                  {"n", cm.total()}};
}

inline io::json report_json(const Report& r) {
  return io::json{{"segment", metrics_json(r.segment, r.confusion)},
                  {"epoch", metrics_json(r.epoch, r.epoch_confusion)},
                  {"layer_weights", r.layer_weights},
                  {"channel_weights", r.channel_weights}};
}

inline void write_report(const fs::path& dir, const Report& r) {
  fs::create_directories(dir);
  io::write_text(dir / "confusion.csv", confusion_csv(r.confusion));
  io::write_text(dir / "epoch_confusion.csv", confusion_csv(r.epoch_confusion));
  io::write_text(dir / "layer_weights.csv", layer_weights_csv(r.layer_weights));
  io::write_text(dir / "channel_weights.csv", channel_weights_csv(r.channel_weights));
  io::write_json(dir / "summary.json", report_json(r));
}

}  // namespace lfpstage
