// lfpstage: synth | train | eval | infer | inspect
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lfpstage/lfpstage.hpp"

namespace fs = std::filesystem;
using namespace lfpstage;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

const char* const kManifest = "model.modeljson";
const char* const kWeights = "model.weights";
const char* const kTrainConfig = "train_config.json";

void warn_all(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

// Writes to dir/name, or to stdout under a "# name" banner when dir is empty.
void emit(const std::string& dir, const std::string& name, const std::string& text) {
  if (dir.empty()) {
    std::cout << "# " << name << '\n' << text;
    return;
  }
  fs::create_directories(dir);
  io::write_text(fs::path(dir) / name, text);
}

struct LoadedModel {
  ModelFile file;
  TrainConfig config;
};

LoadedModel load_model_dir(const fs::path& dir, const std::string& features_override) {
  const fs::path manifest = dir / kManifest;
  const fs::path weights = dir / kWeights;
  const fs::path cfg_path = dir / kTrainConfig;
  for (const auto& p : {manifest, weights, cfg_path})
    if (!fs::exists(p)) throw data_error("model file not found: " + p.string());
  LoadedModel m{load_model(manifest, weights), train_config_from_json(io::read_json(cfg_path))};
  if (!features_override.empty()) {
    if (m.file.backend.kind != BackendKind::Precomputed)
      throw config_error("--features only applies to models trained on precomputed features");
    m.file.backend.feature_path = features_override;
  }
  return m;
}

int run_synth(const std::string& config_path, const std::string& out) {
  SynthConfig cfg;
  if (!config_path.empty()) cfg = synth_config_from_json(io::read_json(config_path));
  fs::create_directories(out);
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const auto [rec, hyp] = generate(cfg, s);
    save_subject(out, rec, hyp);
    std::cerr << "wrote " << rec.header.subject_id << ": " << hyp.epochs.size() << " epochs, " << rec.header.n_channels
              << " channels\n";
  }
  io::write_json(fs::path(out) / "synth_config.json", synth_config_to_json(cfg));
  return kExitOk;
}

int run_train(const std::string& data, const std::string& config_path, const std::string& out, std::size_t threads) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = train_config_from_json(io::read_json(config_path));
  const Dataset ds = load_dataset(data, threads);
  warn_all(ds.warnings);
  std::vector<std::string> warnings;
  FitOptions opts;
  opts.threads = threads;
  opts.warnings = &warnings;
  opts.on_epoch = [](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %3zu  loss %.5f  train_acc %.4f  test_acc %.4f  (%.1fs)\n", r.epoch, r.train_loss,
                 r.train_acc, r.test_acc, r.seconds);
  };
  const FitResult fit_result = fit(ds.segments, cfg, opts);
  warn_all(warnings);

  fs::create_directories(out);
  const fs::path dir = out;
  save_model(dir / kManifest, dir / kWeights, fit_result.model, cfg.backend);
  io::write_json(dir / kTrainConfig, train_config_to_json(cfg));
  io::write_text(dir / "history.csv", history_csv(fit_result.history));
  const FeatureSource source(cfg.backend);
  io::write_text(dir / "channel_weights.csv",
                 channel_weights_csv(channel_weight_report(fit_result.model, source, ds.segments,
                                                           fit_result.split.test, threads)));
  io::write_text(dir / "layer_weights.csv", layer_weights_csv(layer_weight_report(fit_result.model)));
  std::cerr << "best epoch " << fit_result.best_epoch << ", test accuracy "
            << fit_result.history[fit_result.best_epoch - 1].test_acc << '\n';
  return kExitOk;
}

int run_eval(const std::string& model_dir, const std::string& data, const std::string& report_dir,
             const std::string& subset, const std::string& features, std::size_t threads) {
  const LoadedModel m = load_model_dir(model_dir, features);
  const Dataset ds = load_dataset(data, threads);
  warn_all(ds.warnings);
  std::vector<std::size_t> indices;
  if (subset == "test") {
    indices = split_indices(ds.segments, m.config.split).test;
  } else {
    indices.resize(ds.segments.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }
  if (indices.empty()) throw data_error("no segments to evaluate");
  const FeatureSource source(m.file.backend);
  const auto results = predict(m.file.params, source, ds.segments, indices, threads);
  const Report report = build_report(m.file.params, results, ds.segments, indices);
  write_report(report_dir, report);
  std::cerr << "segment accuracy " << report.segment.total_accuracy << " over " << indices.size() << " segments\n";
  return kExitOk;
}

fs::path raw_path_for(const fs::path& header) { return fs::path(header).replace_extension(".f32"); }

int run_infer(const std::string& model_dir, const std::string& recording, const std::string& hypnogram,
              const std::string& out, const std::string& features, std::size_t threads) {
  const LoadedModel m = load_model_dir(model_dir, features);
  fs::path header = recording;
  if (header.extension() != ".json") header += ".json";
  const Recording rec = load_recording(header, raw_path_for(header));
  std::vector<std::string> warnings;
  const auto segments = prepare_segments(rec, load_hypnogram(hypnogram), threads, &warnings);
  warn_all(warnings);
  std::vector<std::size_t> indices(segments.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  const FeatureSource source(m.file.backend);
  const auto results = predict(m.file.params, source, segments, indices, threads);

  std::ostringstream seg_csv, epoch_csv;
  seg_csv.precision(6);
  seg_csv << "segment,epoch_index,start_sample,label,predicted,p_Wake,p_N1,p_N2N3,p_REM\n";
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    seg_csv << i << ',' << s.epoch_index << ',' << s.start_sample << ',' << kClassNames[index(s.label)] << ','
            << kClassNames[results[i].predicted()];
    for (Eigen::Index c = 0; c < results[i].probs.size(); ++c) seg_csv << ',' << results[i].probs[c];
    seg_csv << '\n';
  }
  epoch_csv << "epoch_index,label,predicted\n";
  for (std::size_t start = 0; start < segments.size(); start += kSegmentsPerEpoch) {
    std::vector<std::size_t> preds;
    std::vector<std::array<double, kNumClasses>> probs;
    for (std::size_t i = start; i < start + kSegmentsPerEpoch; ++i) {
      preds.push_back(results[i].predicted());
      std::array<double, kNumClasses> p{};
      for (std::size_t c = 0; c < kNumClasses; ++c) p[c] = results[i].probs[static_cast<Eigen::Index>(c)];
      probs.push_back(p);
    }
    epoch_csv << segments[start].epoch_index << ',' << kClassNames[index(segments[start].label)] << ','
              << kClassNames[epoch_vote(preds, probs)] << '\n';
  }
  emit(out, "segments.csv", seg_csv.str());
  emit(out, "epochs.csv", epoch_csv.str());
  return kExitOk;
}

int run_inspect(const std::string& model_dir, const std::string& out) {
  const LoadedModel m = load_model_dir(model_dir, "");
  emit(out, "layer_weights.csv", layer_weights_csv(layer_weight_report(m.file.params)));
  const fs::path channel = fs::path(model_dir) / "channel_weights.csv";
  if (fs::exists(channel)) emit(out, "channel_weights.csv", io::read_text(channel));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sleep-stage classification from multichannel local field potentials"};
  app.require_subcommand(1);
  std::size_t threads = default_threads();

  std::string synth_config, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", synth_config, "Synth config JSON");
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string train_data, train_config, train_out;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--config", train_config, "Training config JSON");
  train->add_option("--out", train_out, "Model output directory")->required();
  train->add_option("--threads", threads, "Worker threads (default: LFPSTAGE_THREADS or 1)")->check(CLI::PositiveNumber);

  std::string eval_model, eval_data, eval_report, eval_subset = "test", eval_features;
  auto* eval = app.add_subcommand("eval", "Evaluate a model and write reports");
  eval->add_option("--model", eval_model, "Model directory")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--report", eval_report, "Report output directory")->required();
  eval->add_option("--subset", eval_subset, "Segments to evaluate")->check(CLI::IsMember({"test", "all"}));
  eval->add_option("--features", eval_features, "Precomputed feature header overriding the model's");
  eval->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string infer_model, infer_recording, infer_hypnogram, infer_out, infer_features;
  auto* infer = app.add_subcommand("infer", "Predict stages for one recording");
  infer->add_option("--model", infer_model, "Model directory")->required();
  infer->add_option("--recording", infer_recording, "Recording header (.json) or stem")->required();
  infer->add_option("--hypnogram", infer_hypnogram, "Hypnogram CSV defining the epochs")->required();
  infer->add_option("--out", infer_out, "Output directory (default: stdout)");
  infer->add_option("--features", infer_features, "Precomputed feature header overriding the model's");
  infer->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string inspect_model, inspect_out;
  auto* inspect = app.add_subcommand("inspect", "Export layer and channel weights");
  inspect->add_option("--model", inspect_model, "Model directory")->required();
  inspect->add_option("--out", inspect_out, "Output directory (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*synth) return run_synth(synth_config, synth_out);
    if (*train) return run_train(train_data, train_config, train_out, threads);
    if (*eval) return run_eval(eval_model, eval_data, eval_report, eval_subset, eval_features, threads);
    if (*infer) return run_infer(infer_model, infer_recording, infer_hypnogram, infer_out, infer_features, threads);
    if (*inspect) return run_inspect(inspect_model, inspect_out);
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
