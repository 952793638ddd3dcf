#include "avr/cli.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <vector>

#include "CLI11.hpp"
#include "avr/embedding_io.hpp"
#include "avr/error.hpp"
#include "avr/model_file.hpp"

namespace avr::cli {
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

CommandOutcome error_outcome(int code, const std::string& kind, const std::string& message,
                             nlohmann::json detail = nullptr) {
  CommandOutcome outcome;
  outcome.exit_code = code;
  outcome.summary = message;
  outcome.result = {{"error_code", kind}, {"message", message}, {"detail", std::move(detail)}};
  return outcome;
}

}  // namespace

CommandOutcome outcome_from_exception(std::exception_ptr error) {
  try {
    std::rethrow_exception(error);
  } catch (const io::DatasetError& e) {
    return error_outcome(kDataError, "data_error", e.what(), e.errors());
  } catch (const DivergenceError& e) {
    return error_outcome(kRuntimeError, "divergence", e.what());
  } catch (const DataError& e) {
    return error_outcome(kDataError, "data_error", e.what());
  } catch (const service::ServiceError& e) {
    const int code = e.status() >= 400 && e.status() < 500 ? kDataError : kRuntimeError;
    return error_outcome(code, e.code(), e.what(), e.detail());
  } catch (const std::invalid_argument& e) {
    return error_outcome(kUsage, "usage", e.what());
  } catch (const std::exception& e) {
    return error_outcome(kRuntimeError, "runtime_error", e.what());
  }
}

CommandOutcome cmd_train(const TrainArgs& args, std::ostream& log) {
  args.config.validate();
  const io::Dataset dataset = io::load_dataset(args.manifest);
  log << "config " << train::config_to_json(args.config).dump() << '\n';
  log << "dataset " << dataset.name << ": " << dataset.clips.size() << " clips ("
      << dataset.count_label(io::kHumor) << " humor, " << dataset.count_label(io::kNonHumor) << " non_humor)\n";

  train::CvOptions options;
  options.jobs = args.jobs;
  options.progress = [&log](const std::string& line) { log << line << '\n'; };
  const train::CvResult result = train::cross_validate(dataset, args.config, options);
  const fs::path run_dir = args.out_dir / train::run_dir_name(result.report);
  train::write_run(result, run_dir);
  log << train::report_table(result.report);

  CommandOutcome outcome;
  outcome.summary = "wrote " + run_dir.string();
  outcome.result_path = run_dir / "report.json";
  outcome.result = {{"run_dir", run_dir.string()}, {"report", train::report_to_json(result.report)}};
  return outcome;
}

CommandOutcome cmd_evaluate(const fs::path& model_path, const fs::path& manifest, std::ostream& log) {
  const LoadedModel loaded = load_model(model_path);
  for (const auto& w : loaded.warnings) log << "warning: " << w << '\n';
  const io::Dataset dataset = io::load_dataset(manifest, static_cast<std::uint32_t>(loaded.model.spec.input_dim));
  const nn::Classifier classifier(loaded.model.spec, loaded.model.params);
  const train::EvalResult eval = train::evaluate(classifier, dataset);

  nlohmann::json predictions = nlohmann::json::array();
  for (const auto& p : eval.predictions) {
    predictions.push_back({{"clip_id", p.clip_id},
                           {"label", p.label},
                           {"predicted", p.predicted},
                           {"probabilities", {p.probabilities[0], p.probabilities[1]}}});
  }
  CommandOutcome outcome;
  outcome.summary = "accuracy " + std::to_string(eval.accuracy) + ", macro-F1 " + std::to_string(eval.macro_f1);
  outcome.result = {{"model_id", model_id(loaded.model)},
                    {"dataset", dataset.name},
                    {"clips", dataset.clips.size()},
                    {"accuracy", eval.accuracy},
                    {"macro_f1", eval.macro_f1},
                    {"mean_loss", eval.mean_loss},
                    {"predictions", std::move(predictions)}};
  return outcome;
}

CommandOutcome cmd_predict(const PredictArgs& args, std::ostream& log) {
  const bool from_video = !args.video_file.empty();
  if (from_video == (!args.audio.empty() || !args.video.empty())) {
    throw std::invalid_argument("give either the two embedding paths or --video FILE");
  }
  if (!from_video && (args.audio.empty() || args.video.empty())) {
    throw std::invalid_argument("both audio_embedding and video_embedding are required");
  }
  LoadedModel loaded = load_model(args.model);
  for (const auto& w : loaded.warnings) log << "warning: " << w << '\n';

  service::InferenceService svc(args.service);
  svc.set_model(std::move(loaded.model));
  service::Prediction prediction;
  if (from_video) {
    std::ifstream in(args.video_file, std::ios::binary);
    if (!in) throw DataError("cannot open " + args.video_file.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    prediction = svc.predict_from_video(bytes);
  } else {
    const io::EmbeddingRecord audio = io::read_embedding(args.audio);
    const io::EmbeddingRecord video = io::read_embedding(args.video);
    if (audio.modality != io::Modality::audio) throw DataError(args.audio.string() + ": not an audio embedding");
    if (video.modality != io::Modality::video) throw DataError(args.video.string() + ": not a video embedding");
    prediction = svc.predict_from_embeddings(audio.values, video.values);
  }
  CommandOutcome outcome;
  outcome.summary = std::string("predicted ") + std::string(io::label_name(prediction.predicted_label));
  outcome.result = service::prediction_to_json(prediction);
  return outcome;
}

CommandOutcome cmd_serve(const service::ServiceConfig& config, std::ostream& log) {
  log << "service config " << service::service_config_to_json(config).dump() << '\n';
  CommandOutcome outcome;
  outcome.exit_code = service::run_server(config);
  outcome.summary = "server stopped";
  outcome.result = {{"status", "stopped"}};
  return outcome;
}

CommandOutcome cmd_folds(const FoldsArgs& args, std::ostream& log) {
  if (args.k < 2) throw std::invalid_argument("k must be at least 2");
  const io::Dataset dataset = io::load_dataset(args.manifest);
  const io::FoldPlan plan = io::make_folds(dataset, args.k, args.seed);
  log << "folds k=" << args.k << " seed=" << args.seed << " over " << dataset.clips.size() << " clips\n";
  CommandOutcome outcome;
  outcome.summary = "fold plan for " + dataset.name;
  outcome.result = io::fold_plan_to_json(plan);
  return outcome;
}

CommandOutcome cmd_synth(const SynthArgs& args, std::ostream& log) {
  const io::Dataset dataset = synthetic::make_dataset(args.options);
  const fs::path manifest = synthetic::write_dataset(dataset, args.out_dir);
  log << "wrote " << dataset.clips.size() << " synthetic clips to " << args.out_dir.string() << '\n';
  CommandOutcome outcome;
  outcome.summary = "wrote " + manifest.string();
  outcome.result_path = manifest;
  outcome.result = {{"manifest", manifest.string()}, {"clips", dataset.clips.size()}};
  return outcome;
}

namespace {

// Flags that override a TrainConfig loaded from --config; only flags given
// on the command line are applied.
struct TrainFlags {
  std::string arch = "cnn";
  std::string extractor_pair = "videomae_ast";
  int epochs = 50;
  double lr = 1e-5;
  std::size_t batch_size = 32;
  std::size_t k = 5;
  std::uint64_t seed = 0;
  double dropout_rate = 0.2;
  int patience = 5;
  double min_delta = 1e-4;
  double val_fraction = 0.1;
  std::size_t lstm_steps = 768;
  std::string pooling = "global_average";
  fs::path config_file;
  std::vector<std::pair<CLI::Option*, std::function<void(train::TrainConfig&)>>> overrides;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "JSON TrainConfig; flags below override it")->check(CLI::ExistingFile);
    auto add = [&](CLI::Option* opt, std::function<void(train::TrainConfig&)> apply) {
      overrides.emplace_back(opt, std::move(apply));
    };
    add(app.add_option("--arch", arch, "cnn | lstm (reference)")->capture_default_str(),
        [this](auto& c) { c.arch = nn::parse_arch(arch); });
    add(app.add_option("--extractor_pair", extractor_pair, "videomae_ast | languagebind (reference)")->capture_default_str(),
        [this](auto& c) { c.extractor_pair = train::parse_extractor_pair(extractor_pair); });
    add(app.add_option("--epochs", epochs, "maximum epochs (reference)")->capture_default_str(),
        [this](auto& c) { c.epochs = epochs; });
    add(app.add_option("--lr", lr, "Adam learning rate (reference)")->capture_default_str(),
        [this](auto& c) { c.lr = lr; });
    add(app.add_option("--batch_size", batch_size, "mini-batch size (decision)")->capture_default_str(),
        [this](auto& c) { c.batch_size = batch_size; });
    add(app.add_option("--k", k, "cross-validation folds (reference)")->capture_default_str(),
        [this](auto& c) { c.k = k; });
    add(app.add_option("--seed", seed, "master seed (decision)")->capture_default_str(),
        [this](auto& c) { c.seed = seed; });
    add(app.add_option("--dropout_rate", dropout_rate, "head dropout rate (decision)")->capture_default_str(),
        [this](auto& c) { c.dropout_rate = dropout_rate; });
    add(app.add_option("--patience", patience, "early-stopping patience in epochs (decision)")->capture_default_str(),
        [this](auto& c) { c.patience = patience; });
    add(app.add_option("--min_delta", min_delta, "minimum validation-loss improvement (decision)")
            ->capture_default_str(),
        [this](auto& c) { c.min_delta = min_delta; });
    add(app.add_option("--val_fraction", val_fraction, "validation share of each training split (decision)")
            ->capture_default_str(),
        [this](auto& c) { c.val_fraction = val_fraction; });
    add(app.add_option("--lstm_steps", lstm_steps, "LSTM sequence length; 768 = one value per step (decision)")
            ->capture_default_str(),
        [this](auto& c) { c.lstm_steps = lstm_steps; });
    add(app.add_option("--pooling", pooling, "CNN branch pooling: global_average | flatten (decision)")
            ->capture_default_str(),
        [this](auto& c) { c.pooling = nn::parse_pooling(pooling); });
  }

  train::TrainConfig resolve() const {
    train::TrainConfig config;
    if (!config_file.empty()) {
      try {
        config = train::config_from_json(read_json_file(config_file));
      } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(config_file.string() + ": " + e.what());
      }
    }
    for (const auto& [opt, apply] : overrides) {
      if (opt->count() > 0) apply(config);
    }
    config.validate();
    return config;
  }
};

struct ServiceFlags {
  service::ServiceConfig config;
  int demux_timeout_ms = 60'000;
  int extractor_timeout_ms = 60'000;
  int request_timeout_ms = 120'000;

  void attach(CLI::App& app, bool network) {
    if (network) {
      app.add_option("--host", config.host, "listen address")->capture_default_str();
      app.add_option("--port", config.port, "listen port")->capture_default_str();
      app.add_option("--worker_threads", config.worker_threads, "HTTP worker threads")->capture_default_str();
      app.add_option("--request_timeout_ms", request_timeout_ms, "socket read/write timeout")->capture_default_str();
      app.add_flag("--lazy_load", config.lazy_load, "serve before the model is loaded");
      app.add_option("--cors_origin", config.cors_origin, "Access-Control-Allow-Origin value")
          ->capture_default_str();
    }
    app.add_option("--extractor_command", config.extractor_command,
                   "extractor command; placeholders {input} {audio} {video} {out} {pair}")
        ->capture_default_str();
    app.add_option("--extractor_url", config.extractor_url, "extractor HTTP endpoint (replaces the command)");
    app.add_option("--demux_audio_command", config.demux_audio_command, "audio demux command")
        ->capture_default_str();
    app.add_option("--demux_video_command", config.demux_video_command, "video demux command")
        ->capture_default_str();
    app.add_option("--max_upload_bytes", config.max_upload_bytes, "upload size limit")->capture_default_str();
    app.add_option("--demux_timeout_ms", demux_timeout_ms, "demux time budget")->capture_default_str();
    app.add_option("--extractor_timeout_ms", extractor_timeout_ms, "extractor time budget")->capture_default_str();
    app.add_option("--extractor_concurrency", config.extractor_concurrency, "concurrent extractor runs")
        ->capture_default_str();
    app.add_option("--work_dir", config.work_dir, "scratch directory for uploads");
  }

  service::ServiceConfig resolve() const {
    service::ServiceConfig c = config;
    c.demux_timeout = std::chrono::milliseconds(demux_timeout_ms);
    c.extractor_timeout = std::chrono::milliseconds(extractor_timeout_ms);
    c.request_timeout = std::chrono::milliseconds(request_timeout_ms);
    return c;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-visual humor detection: training, evaluation and inference", "avr"};
  app.require_subcommand(1);

  TrainArgs train_args;
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "k-fold cross-validation; writes report and fold models");
  train_cmd->add_option("manifest", train_args.manifest, "dataset manifest")->required();
  train_cmd->add_option("--out_dir", train_args.out_dir, "parent directory of run directories")
      ->capture_default_str();
  train_cmd->add_option("--jobs", train_args.jobs, "folds trained in parallel")->capture_default_str();
  train_flags.attach(*train_cmd);

  fs::path eval_model;
  fs::path eval_manifest;
  auto* eval_cmd = app.add_subcommand("evaluate", "eval-mode metrics of a model on a labeled manifest");
  eval_cmd->add_option("model", eval_model, "model file")->required();
  eval_cmd->add_option("manifest", eval_manifest, "dataset manifest")->required();

  PredictArgs predict_args;
  ServiceFlags predict_service;
  auto* predict_cmd = app.add_subcommand("predict", "predict one clip from embeddings or an mp4");
  predict_cmd->add_option("model", predict_args.model, "model file")->required();
  predict_cmd->add_option("audio_embedding", predict_args.audio, "audio AVRE file");
  predict_cmd->add_option("video_embedding", predict_args.video, "video AVRE file");
  predict_cmd->add_option("--video", predict_args.video_file, "mp4 clip run through demux and extractor");
  predict_service.attach(*predict_cmd, false);

  ServiceFlags serve_service;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP inference service");
  serve_cmd->add_option("--model", serve_service.config.model_path, "model file")->required();
  serve_service.attach(*serve_cmd, true);

  FoldsArgs folds_args;
  auto* folds_cmd = app.add_subcommand("folds", "print the stratified fold plan");
  folds_cmd->add_option("manifest", folds_args.manifest, "dataset manifest")->required();
  folds_cmd->add_option("--k", folds_args.k, "number of folds")->capture_default_str();
  folds_cmd->add_option("--seed", folds_args.seed, "shuffle seed")->capture_default_str();

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic two-Gaussian dataset");
  synth_cmd->add_option("out_dir", synth_args.out_dir, "output directory")->required();
  synth_cmd->add_option("--clips", synth_args.options.clips, "number of clips")->capture_default_str();
  synth_cmd->add_option("--separation", synth_args.options.separation, "class mean offset")->capture_default_str();
  synth_cmd->add_option("--noise", synth_args.options.noise, "per-dimension noise sd")->capture_default_str();
  synth_cmd->add_option("--seed", synth_args.options.seed, "generator seed")->capture_default_str();
  synth_cmd->add_option("--name", synth_args.options.name, "dataset name")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  CommandOutcome outcome;
  try {
    if (*train_cmd) {
      train_args.config = train_flags.resolve();
      outcome = cmd_train(train_args, err);
    } else if (*eval_cmd) {
      outcome = cmd_evaluate(eval_model, eval_manifest, err);
    } else if (*predict_cmd) {
      predict_args.service = predict_service.resolve();
      outcome = cmd_predict(predict_args, err);
    } else if (*serve_cmd) {
      outcome = cmd_serve(serve_service.resolve(), err);
    } else if (*folds_cmd) {
      outcome = cmd_folds(folds_args, err);
    } else if (*synth_cmd) {
      outcome = cmd_synth(synth_args, err);
    }
  } catch (...) {
    outcome = outcome_from_exception(std::current_exception());
  }
  if (outcome.exit_code != kOk) err << "error: " << outcome.summary << '\n';
  out << outcome.result.dump(2) << '\n';
  return outcome.exit_code;
}

}  // namespace avr::cli
