#pragma once

// k-fold cross-validation harness. Each fold trains on the remaining k-1
// folds (minus a stratified validation split used for early stopping) and is
// scored on its own test fold in eval mode. Every random stream is derived
// from the config seed and keyed by fold/epoch/batch, so single-threaded and
// fold-parallel runs produce identical results.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "avr/embedding_io.hpp"
#include "avr/model_file.hpp"
#include "avr/nn/model.hpp"
#include "json.hpp"

namespace avr::train {

enum class ExtractorPair { videomae_ast, languagebind };

std::string_view to_string(ExtractorPair pair);
ExtractorPair parse_extractor_pair(std::string_view text);

struct TrainConfig {
  nn::Arch arch = nn::Arch::cnn;
  ExtractorPair extractor_pair = ExtractorPair::videomae_ast;
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
  nn::BranchPooling pooling = nn::BranchPooling::global_average;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  nn::ModelSpec model_spec() const;
};

nlohmann::json config_to_json(const TrainConfig& config);
/// Missing fields keep their defaults; unknown fields are rejected.
TrainConfig config_from_json(const nlohmann::json& doc);
/// 16 hex digits of FNV-1a over the canonical JSON form.
std::string config_hash(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingLog {
  double initial_train_loss = 0.0;
  double initial_val_loss = 0.0;
  /// Eval-mode training-split loss of the returned (restored) model.
  double final_train_loss = 0.0;
  std::vector<EpochRecord> epochs;
  int stop_epoch = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

struct TestPrediction {
  std::string clip_id;
  int label = 0;
  int predicted = 0;
  std::array<double, 2> probabilities{};
};

struct FoldMetrics {
  std::size_t fold_index = 0;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
  int stop_epoch = 0;
  bool operator==(const FoldMetrics&) const = default;
};

struct FoldOutcome {
  nn::ModelParams model;
  FoldMetrics metrics;
  TrainingLog log;
  std::vector<TestPrediction> test_predictions;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
};

/// Stratified hold-out of round(n_class * fraction) ids per class (at least
/// one when the class has two or more), chosen with a seeded shuffle.
std::vector<std::string> validation_split(const std::vector<io::LabeledId>& train, double fraction,
                                          std::uint64_t seed);

/// Trains one fold. Throws avr::DivergenceError on a non-finite loss and
/// avr::DataError when a split is empty.
FoldOutcome train_fold(const io::Dataset& dataset, const io::FoldPlan& plan, std::size_t test_fold,
                       const TrainConfig& config);

struct EvalResult {
  std::vector<TestPrediction> predictions;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double mean_loss = 0.0;
};

/// Eval-mode predictions and metrics over the given clips (all clips when
/// `clip_indices` is empty).
EvalResult evaluate(const nn::Classifier& classifier, const io::Dataset& dataset,
                    const std::vector<std::size_t>& clip_indices = {});

struct CvReport {
  std::string dataset_name;
  std::size_t dataset_size = 0;
  TrainConfig config;
  std::string config_hash;
  std::vector<FoldMetrics> folds;
  double mean_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double wall_time_s = 0.0;
  std::string created_at;
};

/// Published reference accuracies carried as report metadata.
nlohmann::json reference_scores();

/// Fills the mean fields from `report.folds`.
void aggregate(CvReport& report);

nlohmann::json report_to_json(const CvReport& report);
CvReport report_from_json(const nlohmann::json& doc);
/// Human-readable summary laid out like the reference table.
std::string report_table(const CvReport& report);

struct CvResult {
  CvReport report;
  std::vector<FoldOutcome> folds;
};

struct CvOptions {
  /// Folds trained concurrently; results are joined in fold order.
  std::size_t jobs = 1;
  std::function<void(const std::string&)> progress;
};

CvResult cross_validate(const io::Dataset& dataset, const TrainConfig& config, const CvOptions& options = {});

ModelFile fold_model_file(const CvResult& result, std::size_t fold);

/// Writes report.json, report.txt and per-fold model and log files into
/// `run_dir` (created if needed).
void write_run(const CvResult& result, const std::filesystem::path& run_dir);

/// "<UTC timestamp>-<config hash>"
std::string run_dir_name(const CvReport& report);

/// Recomputes the report from the per-fold logs persisted by write_run.
CvReport rebuild_report(const std::filesystem::path& run_dir);

}  // namespace avr::train
