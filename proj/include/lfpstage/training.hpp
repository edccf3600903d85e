#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dataset_io.hpp"
#include "error.hpp"
#include "features.hpp"
#include "focal_loss.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace lfpstage {

// ---------------------------------------------------------------------------
// Class weights.

// Inverse class frequency (counts floored at 1), normalized to mean 1.
inline std::array<double, kNumClasses> class_weights(std::span<const std::size_t> counts,
                                                     std::vector<std::string>* warnings = nullptr) {
  if (counts.size() != kNumClasses) throw config_error("class_weights expects 4 counts");
  if (std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c == 0; }))
    throw data_error("class_weights: all class counts are zero");
  std::array<double, kNumClasses> w{};
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0 && warnings)
      warnings->push_back("class " + std::string(kClassNames[c]) + " has no training segments; weight floor applied");
    w[c] = 1.0 / static_cast<double>(std::max<std::size_t>(counts[c], 1));
    total += w[c];
  }
  const double mean = total / static_cast<double>(kNumClasses);
  for (double& x : w) x /= mean;
  return w;
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename S>
struct AdamState {
  std::vector<S> m;
  std::vector<S> v;
  std::uint64_t step = 0;
};

template <typename S>
void adam_step(AdamState<S>& state, ModelParams<S>& params, const ModelParams<S>& grads, const AdamHyper& h) {
  if (grads.size() != params.size()) throw data_error("adam: gradient and parameter sizes differ");
  if (state.m.empty()) {
    state.m.assign(params.size(), S(0));
    state.v.assign(params.size(), S(0));
  }
  for (const auto& spec : grads.layout()) {
    const auto g = grads.values().subspan(spec.offset, spec.size);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw numeric_error("non-finite gradient in " + spec.name + " at element " + std::to_string(i));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  auto p = params.values();
  const auto g = grads.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double m = h.beta1 * static_cast<double>(state.m[i]) + (1.0 - h.beta1) * gi;
    const double v = h.beta2 * static_cast<double>(state.v[i]) + (1.0 - h.beta2) * gi * gi;
    state.m[i] = static_cast<S>(m);
    state.v[i] = static_cast<S>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    p[i] = static_cast<S>(static_cast<double>(p[i]) - h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon));
  }
}

// ---------------------------------------------------------------------------
// Configuration.

enum class Task { Classification, Prediction };

inline std::string to_string(Task t) { return t == Task::Classification ? "classification" : "prediction"; }

inline SplitKind split_kind_for(Task t) {
  return t == Task::Classification ? SplitKind::Random : SplitKind::Chronological;
}

struct ModelShape {
  std::size_t attention_dim = 32;
  std::array<std::size_t, kConvLayers> conv_widths{32, 32, 32};
  ConvPadding padding = ConvPadding::Valid;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamHyper adam;
  std::uint64_t seed = 1;
  SplitSpec split;
  BackendConfig backend;
  Task task = Task::Classification;
  double focal_gamma = 2.0;
  ModelShape model;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw config_error("epochs and batch_size must be >= 1");
  if (!(cfg.adam.learning_rate > 0.0 && cfg.adam.epsilon > 0.0))
    throw config_error("learning_rate and epsilon must be positive");
  if (!(cfg.adam.beta1 > 0.0 && cfg.adam.beta1 < 1.0 && cfg.adam.beta2 > 0.0 && cfg.adam.beta2 < 1.0))
    throw config_error("Adam betas must lie in (0, 1)");
  if (!(cfg.focal_gamma >= 0.0)) throw config_error("focal_gamma must be >= 0");
  if (cfg.split.kind != split_kind_for(cfg.task))
    throw config_error("task " + to_string(cfg.task) + " requires a " +
                       (cfg.task == Task::Classification ? "random" : "chronological") + " split");
  validate(cfg.split);
  validate(cfg.backend);
}

inline io::json train_config_to_json(const TrainConfig& cfg) {
  return io::json{
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"learning_rate", cfg.adam.learning_rate},
      {"beta1", cfg.adam.beta1},
      {"beta2", cfg.adam.beta2},
      {"epsilon", cfg.adam.epsilon},
      {"seed", cfg.seed},
      {"split",
       {{"kind", cfg.split.kind == SplitKind::Random ? "random" : "chronological"},
        {"train_fraction", cfg.split.train_fraction},
        {"seed", cfg.split.seed}}},
      {"backend", backend_to_json(cfg.backend)},
      {"task", to_string(cfg.task)},
      {"focal_gamma", cfg.focal_gamma},
      {"model",
       {{"attention_dim", cfg.model.attention_dim},
        {"conv_widths", cfg.model.conv_widths},
        {"padding", to_string(cfg.model.padding)}}},
  };
}

// Missing keys take defaults; unknown keys are rejected. The split kind
// follows the task unless given explicitly.
inline TrainConfig train_config_from_json(const io::json& j) {
  if (!j.is_object()) throw config_error("training config must be a JSON object");
  TrainConfig cfg;
  bool kind_given = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") cfg.epochs = value.get<std::size_t>();
      else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
      else if (key == "learning_rate") cfg.adam.learning_rate = value.get<double>();
      else if (key == "beta1") cfg.adam.beta1 = value.get<double>();
      else if (key == "beta2") cfg.adam.beta2 = value.get<double>();
      else if (key == "epsilon") cfg.adam.epsilon = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "task") {
        const auto t = value.get<std::string>();
        if (t == "classification") cfg.task = Task::Classification;
        else if (t == "prediction") cfg.task = Task::Prediction;
        else throw config_error("unknown task '" + t + "'");
      } else if (key == "focal_gamma") cfg.focal_gamma = value.get<double>();
      else if (key == "backend") cfg.backend = backend_from_json(value);
      else if (key == "split") {
        for (const auto& [sk, sv] : value.items()) {
          if (sk == "kind") {
            const auto k = sv.get<std::string>();
            if (k == "random") cfg.split.kind = SplitKind::Random;
            else if (k == "chronological") cfg.split.kind = SplitKind::Chronological;
            else throw config_error("unknown split kind '" + k + "'");
            kind_given = true;
          } else if (sk == "train_fraction") cfg.split.train_fraction = sv.get<double>();
          else if (sk == "seed") cfg.split.seed = sv.get<std::uint64_t>();
          else throw config_error("split: unknown key '" + sk + "'");
        }
      } else if (key == "model") {
        for (const auto& [mk, mv] : value.items()) {
          if (mk == "attention_dim") cfg.model.attention_dim = mv.get<std::size_t>();
          else if (mk == "conv_widths") {
            const auto w = mv.get<std::vector<std::size_t>>();
            if (w.size() != kConvLayers) throw config_error("model.conv_widths needs 3 entries");
            std::copy(w.begin(), w.end(), cfg.model.conv_widths.begin());
          } else if (mk == "padding") cfg.model.padding = padding_from_string(mv.get<std::string>());
          else throw config_error("model: unknown key '" + mk + "'");
        }
      } else {
        throw config_error("training config: unknown key '" + key + "'");
      }
    }
  } catch (const io::json::exception& e) {
    throw config_error(std::string("training config: ") + e.what());
  }
  if (!kind_given) cfg.split.kind = split_kind_for(cfg.task);
  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Batched prediction.

// Forward pass for segments[indices[i]] into slot i.
inline std::vector<ForwardResult<float>> predict(const ModelParams<float>& m, const FeatureSource& source,
                                                 std::span<const Segment> segments,
                                                 std::span<const std::size_t> indices, std::size_t threads = 1) {
  std::vector<ForwardResult<float>> out(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    const std::size_t s = indices[i];
    out[i] = forward(m, source.get(segments[s], s));
  });
  return out;
}

inline double accuracy(std::span<const ForwardResult<float>> results, std::span<const Segment> segments,
                       std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i)
    correct += results[i].predicted() == index(segments[indices[i]].label);
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
  double seconds = 0;
};

using TrainHistory = std::vector<EpochRecord>;

inline std::string history_csv(const TrainHistory& h) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,train_loss,train_acc,test_acc,seconds\n";
  for (const auto& r : h)
    out << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.test_acc << ',' << r.seconds << '\n';
  return out.str();
}

struct FitOptions {
  std::size_t threads = 1;
  std::function<void(const EpochRecord&)> on_epoch;
  std::vector<std::string>* warnings = nullptr;
};

struct FitResult {
  ModelParams<float> model;  // best-test-accuracy checkpoint
  TrainHistory history;
  SplitIndices split;
  FocalLossConfig loss;
  std::size_t best_epoch = 0;
};

inline ModelDims model_dims_for(const TrainConfig& cfg, const FeatureTensor& probe) {
  ModelDims d;
  d.n_layers = probe.layers;
  d.feature_dim = probe.dim;
  d.attention_dim = cfg.model.attention_dim;
  d.conv_widths = cfg.model.conv_widths;
  d.padding = cfg.model.padding;
  return d;
}

// Mini-batch Adam on the mean focal loss. Per-sample gradients are computed
// into per-slot buffers and summed in slot order, so the result does not
// depend on opts.threads.
inline FitResult fit(std::span<const Segment> segments, const TrainConfig& cfg, const FitOptions& opts = {}) {
  validate(cfg);
  FitResult result;
  result.split = split_indices(segments, cfg.split);
  if (result.split.train.empty()) throw data_error("training split is empty");

  const FeatureSource source(cfg.backend);
  std::array<std::size_t, kNumClasses> counts{};
  for (auto i : result.split.train) ++counts[index(segments[i].label)];
  result.loss.gamma = cfg.focal_gamma;
  result.loss.alpha = class_weights(counts, opts.warnings);

  const std::size_t first = result.split.train.front();
  const ModelDims dims = model_dims_for(cfg, source.get(segments[first], first));
  ModelParams<float> model = init_model<float>(dims, cfg.seed);
  result.model = model;
  AdamState<float> adam;

  std::vector<std::size_t> order = result.split.train;
  const std::size_t batch = cfg.batch_size;
  std::vector<ModelParams<float>> slot_grads(batch, ModelParams<float>(dims));
  std::vector<float> slot_loss(batch);
  std::vector<char> slot_correct(batch);
  ModelParams<float> grads(dims);
  double best_acc = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    order = result.split.train;
    Rng rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(std::span(order));

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      parallel_for(n, opts.threads, [&](std::size_t i) {
        const std::size_t s = order[start + i];
        slot_grads[i].set_zero();
        ForwardResult<float> fr;
        slot_loss[i] = backward(model, source.get(segments[s], s), segments[s].label, result.loss, slot_grads[i], &fr);
        slot_correct[i] = fr.predicted() == index(segments[s].label);
      });
      grads.set_zero();
      for (std::size_t i = 0; i < n; ++i) {
        grads += slot_grads[i];
        loss_sum += slot_loss[i];
        correct += slot_correct[i];
      }
      const float inv = 1.0f / static_cast<float>(n);
      for (float& g : grads.values()) g *= inv;
      adam_step(adam, model, grads, cfg.adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    const auto test_results = predict(model, source, segments, result.split.test, opts.threads);
    rec.test_acc = accuracy(test_results, segments, result.split.test);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rec.train_loss)) throw numeric_error("training loss became non-finite at epoch " + std::to_string(epoch));
    if (rec.test_acc > best_acc) {
      best_acc = rec.test_acc;
      result.model = model;
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gradient verification.

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_tensor;
  std::size_t worst_element = 0;
  double analytic = 0;
  double numeric = 0;
};

// Relative error with a 1e-6 denominator floor so that gradients that are
// zero up to round-off compare on an absolute scale.
inline double gradient_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline GradCheckReport compare_gradients(const ModelParams<double>& m, const FeatureTensor& sample, Label4 label,
                                         const FocalLossConfig& loss, const ModelParams<double>& analytic,
                                         double eps = 1e-5) {
  GradCheckReport report;
  report.max_rel_error = -1.0;
  ModelParams<double> probe = m;
  auto values = probe.values();
  for (const auto& spec : m.layout()) {
    for (std::size_t e = 0; e < spec.size; ++e) {
      const std::size_t i = spec.offset + e;
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = focal_loss<double>(forward(probe, sample).probs, label, loss);
      values[i] = saved - eps;
      const double down = focal_loss<double>(forward(probe, sample).probs, label, loss);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = gradient_rel_error(analytic.values()[i], numeric);
      if (err > report.max_rel_error) {
        report = {err, spec.name, e, analytic.values()[i], numeric};
      }
    }
  }
  return report;
}

inline GradCheckReport grad_check(const ModelParams<double>& m, const FeatureTensor& sample, Label4 label,
                                  const FocalLossConfig& loss = {}, double eps = 1e-5) {
  ModelParams<double> analytic(m.dims());
  backward(m, sample, label, loss, analytic);
  return compare_gradients(m, sample, label, loss, analytic, eps);
}

}  // namespace lfpstage
