#pragma once

// Command-line front end. Every command is a thin wrapper over library
// calls; machine-readable results are JSON on stdout and logs go to stderr.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "avr/service.hpp"
#include "avr/synthetic.hpp"
#include "avr/trainer.hpp"
#include "json.hpp"

namespace avr::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kRuntimeError = 3 };

struct CommandOutcome {
  int exit_code = kOk;
  std::string summary;
  std::optional<std::filesystem::path> result_path;
  nlohmann::json result;
};

struct TrainArgs {
  std::filesystem::path manifest;
  train::TrainConfig config;
  std::filesystem::path out_dir = "runs";
  std::size_t jobs = 1;
};

struct PredictArgs {
  std::filesystem::path model;
  std::filesystem::path audio;
  std::filesystem::path video;
  /// When set, the clip goes through the service pipeline (demux + extractor).
  std::filesystem::path video_file;
  service::ServiceConfig service;
};

struct FoldsArgs {
  std::filesystem::path manifest;
  std::size_t k = 5;
  std::uint64_t seed = 0;
};

struct SynthArgs {
  std::filesystem::path out_dir;
  synthetic::Options options;
};

CommandOutcome cmd_train(const TrainArgs& args, std::ostream& log);
CommandOutcome cmd_evaluate(const std::filesystem::path& model, const std::filesystem::path& manifest,
                            std::ostream& log);
CommandOutcome cmd_predict(const PredictArgs& args, std::ostream& log);
CommandOutcome cmd_serve(const service::ServiceConfig& config, std::ostream& log);
CommandOutcome cmd_folds(const FoldsArgs& args, std::ostream& log);
CommandOutcome cmd_synth(const SynthArgs& args, std::ostream& log);

/// Maps an in-flight exception to an exit code and JSON error document.
CommandOutcome outcome_from_exception(std::exception_ptr error);

/// Parses argv, dispatches, prints the result and returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace avr::cli
