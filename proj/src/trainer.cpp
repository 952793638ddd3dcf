#include "avr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <future>
#include <iomanip>
#include <set>
#include <sstream>

#include "avr/error.hpp"
#include "avr/metrics.hpp"
#include "avr/optim.hpp"
#include "avr/random.hpp"

namespace avr::train {
namespace fs = std::filesystem;

std::string_view to_string(ExtractorPair pair) {
  return pair == ExtractorPair::videomae_ast ? "videomae_ast" : "languagebind";
}

ExtractorPair parse_extractor_pair(std::string_view text) {
  if (text == "videomae_ast" || text == "videomae-ast" || text == "videomae+ast") return ExtractorPair::videomae_ast;
  if (text == "languagebind") return ExtractorPair::languagebind;
  throw std::invalid_argument("unknown extractor pair '" + std::string(text) +
                              "' (expected videomae_ast or languagebind)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (k < 2) fail("k must be >= 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
  if (patience < 0) fail("patience must be >= 0");
  if (!(min_delta >= 0.0)) fail("min_delta must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) fail("val_fraction must be in (0, 0.5)");
  model_spec().validate();
}

nn::ModelSpec TrainConfig::model_spec() const {
  nn::ModelSpec spec;
  spec.arch = arch;
  spec.dropout_rate = dropout_rate;
  spec.lstm_steps = lstm_steps;
  spec.pooling = pooling;
  return spec;
}

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"arch", nn::to_string(c.arch)},
          {"extractor_pair", to_string(c.extractor_pair)},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"k", c.k},
          {"seed", c.seed},
          {"dropout_rate", c.dropout_rate},
          {"patience", c.patience},
          {"min_delta", c.min_delta},
          {"val_fraction", c.val_fraction},
          {"lstm_steps", c.lstm_steps},
          {"pooling", nn::to_string(c.pooling)}};
}

TrainConfig config_from_json(const nlohmann::json& doc) {
  static const std::set<std::string> known = {"arch",         "extractor_pair", "epochs",     "lr",
                                              "batch_size",   "k",              "seed",       "dropout_rate",
                                              "patience",     "min_delta",      "val_fraction", "lstm_steps",
                                              "pooling"};
  if (!doc.is_object()) throw std::invalid_argument("config: expected a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw std::invalid_argument("config: unknown field '" + key + "'");
  }
  TrainConfig c;
  try {
    if (doc.contains("arch")) c.arch = nn::parse_arch(doc["arch"].get<std::string>());
    if (doc.contains("extractor_pair")) c.extractor_pair = parse_extractor_pair(doc["extractor_pair"].get<std::string>());
    c.epochs = doc.value("epochs", c.epochs);
    c.lr = doc.value("lr", c.lr);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.k = doc.value("k", c.k);
    c.seed = doc.value("seed", c.seed);
    c.dropout_rate = doc.value("dropout_rate", c.dropout_rate);
    c.patience = doc.value("patience", c.patience);
    c.min_delta = doc.value("min_delta", c.min_delta);
    c.val_fraction = doc.value("val_fraction", c.val_fraction);
    c.lstm_steps = doc.value("lstm_steps", c.lstm_steps);
    if (doc.contains("pooling")) c.pooling = nn::parse_pooling(doc["pooling"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

std::string config_hash(const TrainConfig& config) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(config_to_json(config).dump());
  return os.str();
}

namespace {

void accumulate(nn::ParamMap<double>& sum, const nn::ParamMap<double>& grads) {
  if (sum.empty()) {
    sum = grads;
    return;
  }
  auto it = sum.begin();
  for (const auto& [name, g] : grads) {
    auto& dst = it->second.storage();
    const auto& src = g.storage();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    ++it;
  }
}

double mean_loss(const nn::ModelSpec& spec, const nn::ParamMap<double>& params, const io::Dataset& dataset,
                 const std::vector<std::size_t>& indices) {
  double total = 0.0;
  for (const std::size_t idx : indices) {
    const auto& clip = dataset.clips[idx];
    const auto logits = nn::model_forward(spec, params, clip.audio.values, clip.video.values, nn::Mode::eval);
    total += optim::cross_entropy(logits, clip.label).loss;
  }
  return indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
}

std::vector<std::size_t> indices_of(const io::Dataset& dataset, const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(*dataset.find(id));
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

nlohmann::json fold_metrics_json(const FoldMetrics& m) {
  return {{"fold_index", m.fold_index},
          {"test_accuracy", m.test_accuracy},
          {"test_macro_f1", m.test_macro_f1},
          {"stop_epoch", m.stop_epoch}};
}

FoldMetrics fold_metrics_from_json(const nlohmann::json& j) {
  return {j.at("fold_index").get<std::size_t>(), j.at("test_accuracy").get<double>(),
          j.at("test_macro_f1").get<double>(), j.at("stop_epoch").get<int>()};
}

nlohmann::json log_json(const FoldOutcome& fold) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : fold.log.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  nlohmann::json predictions = nlohmann::json::array();
  for (const auto& p : fold.test_predictions) {
    predictions.push_back({{"clip_id", p.clip_id},
                           {"label", p.label},
                           {"predicted", p.predicted},
                           {"probabilities", {{"non_humor", p.probabilities[0]}, {"humor", p.probabilities[1]}}}});
  }
  return {{"metrics", fold_metrics_json(fold.metrics)},
          {"log",
           {{"initial_train_loss", fold.log.initial_train_loss},
            {"initial_val_loss", fold.log.initial_val_loss},
            {"final_train_loss", fold.log.final_train_loss},
            {"epochs", std::move(epochs)},
            {"stop_epoch", fold.log.stop_epoch},
            {"best_epoch", fold.log.best_epoch},
            {"best_val_loss", fold.log.best_val_loss},
            {"stopped_early", fold.log.stopped_early}}},
          {"train_ids", fold.train_ids},
          {"val_ids", fold.val_ids},
          {"test_ids", fold.test_ids},
          {"test_predictions", std::move(predictions)}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<std::string> validation_split(const std::vector<io::LabeledId>& train, double fraction,
                                          std::uint64_t seed) {
  std::vector<std::string> out;
  for (int label : {io::kNonHumor, io::kHumor}) {
    std::vector<std::string> ids;
    for (const auto& c : train) {
      if (c.label == label) ids.push_back(c.clip_id);
    }
    std::sort(ids.begin(), ids.end());
    SplitMix64 rng(derive_seed(seed, {fnv1a64(io::label_name(label))}));
    shuffle(ids, rng);
    auto take = static_cast<std::size_t>(std::llround(static_cast<double>(ids.size()) * fraction));
    if (ids.size() >= 2) take = std::clamp<std::size_t>(take, 1, ids.size() - 1);
    else take = 0;
    out.insert(out.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

EvalResult evaluate(const nn::Classifier& classifier, const io::Dataset& dataset,
                    const std::vector<std::size_t>& clip_indices) {
  std::vector<std::size_t> indices = clip_indices;
  if (indices.empty()) {
    indices.resize(dataset.clips.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }
  EvalResult result;
  std::vector<int> predicted;
  std::vector<int> labels;
  double total_loss = 0.0;
  for (const std::size_t idx : indices) {
    const auto& clip = dataset.clips.at(idx);
    const auto logits = classifier.logits(clip.audio.values, clip.video.values);
    total_loss += optim::cross_entropy(logits, clip.label).loss;
    const auto probs = nn::softmax(logits);
    TestPrediction p{clip.clip_id, clip.label, 0, {probs[0], probs[1]}};
    p.predicted = nn::argmax_label(p.probabilities);
    predicted.push_back(p.predicted);
    labels.push_back(p.label);
    result.predictions.push_back(std::move(p));
  }
  result.accuracy = metrics::accuracy(predicted, labels);
  result.macro_f1 = metrics::macro_f1(predicted, labels);
  result.mean_loss = total_loss / static_cast<double>(indices.size());
  return result;
}

FoldOutcome train_fold(const io::Dataset& dataset, const io::FoldPlan& plan, std::size_t test_fold,
                       const TrainConfig& config) {
  config.validate();
  if (test_fold >= plan.k) {
    throw std::invalid_argument("test fold " + std::to_string(test_fold) + " outside [0, " +
                                std::to_string(plan.k) + ")");
  }
  const nn::ModelSpec spec = config.model_spec();
  FoldOutcome outcome;
  std::vector<io::LabeledId> train_pool;
  for (const auto& clip : dataset.clips) {
    if (plan.fold_of(clip.clip_id) == test_fold) {
      outcome.test_ids.push_back(clip.clip_id);
    } else {
      train_pool.push_back({clip.clip_id, clip.label});
    }
  }
  std::sort(outcome.test_ids.begin(), outcome.test_ids.end());
  std::sort(train_pool.begin(), train_pool.end(),
            [](const io::LabeledId& a, const io::LabeledId& b) { return a.clip_id < b.clip_id; });
  if (outcome.test_ids.empty()) throw DataError("fold " + std::to_string(test_fold) + " has no test clips");

  outcome.val_ids = validation_split(train_pool, config.val_fraction,
                                     derive_seed(config.seed, {fnv1a64("validation"), test_fold}));
  const std::set<std::string> val_set(outcome.val_ids.begin(), outcome.val_ids.end());
  for (const auto& c : train_pool) {
    if (!val_set.count(c.clip_id)) outcome.train_ids.push_back(c.clip_id);
  }
  if (outcome.train_ids.empty()) throw DataError("fold " + std::to_string(test_fold) + ": empty training split");
  if (outcome.val_ids.empty()) {
    throw DataError("fold " + std::to_string(test_fold) + ": empty validation split (dataset too small)");
  }
  {
    const std::set<std::string> test_set(outcome.test_ids.begin(), outcome.test_ids.end());
    for (const auto& id : train_pool) {
      if (test_set.count(id.clip_id)) throw std::logic_error("clip " + id.clip_id + " in both train and test");
    }
  }

  const auto train_idx = indices_of(dataset, outcome.train_ids);
  const auto val_idx = indices_of(dataset, outcome.val_ids);
  const auto test_idx = indices_of(dataset, outcome.test_ids);

  nn::ModelParams params = nn::init_params(spec, derive_seed(config.seed, {fnv1a64("init"), test_fold}));
  optim::AdamState adam;
  adam.hyper.lr = config.lr;
  optim::EarlyStopState stopper;
  stopper.patience = config.patience;
  stopper.min_delta = config.min_delta;

  TrainingLog& log = outcome.log;
  {
    const auto wide = params.widen();
    log.initial_train_loss = mean_loss(spec, wide, dataset, train_idx);
    log.initial_val_loss = mean_loss(spec, wide, dataset, val_idx);
  }

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    SplitMix64 shuffle_rng(derive_seed(config.seed, {fnv1a64("shuffle"), test_fold, static_cast<std::uint64_t>(epoch)}));
    shuffle(order, shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const auto wide = params.widen();
      SplitMix64 dropout_rng(derive_seed(
          config.seed, {fnv1a64("dropout"), test_fold, static_cast<std::uint64_t>(epoch), batch_index}));
      nn::ParamMap<double> grads;
      double batch_loss = 0.0;
      nn::ForwardCache cache;
      for (std::size_t i = start; i < end; ++i) {
        const auto& clip = dataset.clips[order[i]];
        const auto logits = nn::model_forward(spec, wide, clip.audio.values, clip.video.values, nn::Mode::train,
                                              &dropout_rng, &cache);
        const auto loss = optim::cross_entropy(logits, clip.label);
        if (!std::isfinite(loss.loss)) {
          throw DivergenceError("fold " + std::to_string(test_fold) + " epoch " + std::to_string(epoch) +
                                ": non-finite training loss on clip " + clip.clip_id);
        }
        batch_loss += loss.loss;
        accumulate(grads, nn::model_backward(spec, wide, cache, loss.grad_logits));
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& [name, g] : grads) {
        for (auto& v : g.storage()) v *= scale;
      }
      optim::adam_step(params.tensors, grads, adam);
      epoch_loss += batch_loss;
    }

    const double train_loss = epoch_loss / static_cast<double>(order.size());
    const double val_loss = mean_loss(spec, params.widen(), dataset, val_idx);
    log.epochs.push_back({epoch, train_loss, val_loss});
    log.stop_epoch = epoch;
    const auto decision = optim::early_stop_update(stopper, val_loss, params);
    if (stopper.error) {
      throw DivergenceError("fold " + std::to_string(test_fold) + " epoch " + std::to_string(epoch) +
                            ": non-finite validation loss");
    }
    if (decision == optim::StopDecision::stop) {
      log.stopped_early = true;
      break;
    }
  }

  if (stopper.best_params) {
    params = *stopper.best_params;
    log.best_epoch = stopper.best_epoch;
    log.best_val_loss = stopper.best_val_loss;
    if (mean_loss(spec, params.widen(), dataset, val_idx) != log.best_val_loss) {
      throw std::logic_error("restored snapshot does not reproduce the best validation loss");
    }
  } else {
    log.best_epoch = 0;
    log.best_val_loss = log.initial_val_loss;
  }

  const nn::Classifier classifier(spec, params);
  log.final_train_loss = mean_loss(spec, params.widen(), dataset, train_idx);
  EvalResult eval = evaluate(classifier, dataset, test_idx);
  outcome.test_predictions = std::move(eval.predictions);
  outcome.metrics = {test_fold, eval.accuracy, eval.macro_f1, log.stop_epoch};
  outcome.model = std::move(params);
  return outcome;
}

nlohmann::json reference_scores() {
  return {{"metric", "accuracy (%)"},
          {"aggregation", "mean over 5 folds"},
          {"note", "published values on an unidentified dataset; reference only, not reproduced or asserted"},
          {"cnn", {{"languagebind", 49.68}, {"videomae_ast", 56.70}}},
          {"lstm", {{"languagebind", 48.40}, {"videomae_ast", 54.82}}}};
}

void aggregate(CvReport& report) {
  double acc = 0.0;
  double f1 = 0.0;
  for (const auto& f : report.folds) {
    acc += f.test_accuracy;
    f1 += f.test_macro_f1;
  }
  const auto n = static_cast<double>(report.folds.size());
  report.mean_accuracy = report.folds.empty() ? 0.0 : acc / n;
  report.mean_macro_f1 = report.folds.empty() ? 0.0 : f1 / n;
}

nlohmann::json report_to_json(const CvReport& report) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : report.folds) folds.push_back(fold_metrics_json(f));
  return {{"dataset", {{"name", report.dataset_name}, {"size", report.dataset_size}}},
          {"config", config_to_json(report.config)},
          {"config_hash", report.config_hash},
          {"folds", std::move(folds)},
          {"mean_accuracy", report.mean_accuracy},
          {"mean_macro_f1", report.mean_macro_f1},
          {"metrics",
           {{"accuracy", "fraction of test clips classified correctly"},
            {"macro_f1", "unweighted mean of per-class F1 over {non_humor, humor}"}}},
          {"created_at", report.created_at},
          {"wall_time_s", report.wall_time_s},
          {"reference", reference_scores()}};
}

CvReport report_from_json(const nlohmann::json& doc) {
  try {
    CvReport report;
    report.dataset_name = doc.at("dataset").at("name").get<std::string>();
    report.dataset_size = doc.at("dataset").at("size").get<std::size_t>();
    report.config = config_from_json(doc.at("config"));
    report.config_hash = doc.at("config_hash").get<std::string>();
    for (const auto& f : doc.at("folds")) report.folds.push_back(fold_metrics_from_json(f));
    report.mean_accuracy = doc.at("mean_accuracy").get<double>();
    report.mean_macro_f1 = doc.at("mean_macro_f1").get<double>();
    report.created_at = doc.value("created_at", std::string{});
    report.wall_time_s = doc.value("wall_time_s", 0.0);
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  }
}

std::string report_table(const CvReport& report) {
  std::ostringstream os;
  os << std::fixed;
  os << "Cross-validation: " << report.dataset_name << " (" << report.dataset_size << " clips), "
     << report.folds.size() << " folds, arch=" << nn::to_string(report.config.arch)
     << ", pair=" << to_string(report.config.extractor_pair) << ", config " << report.config_hash << "\n\n";
  os << "  fold   accuracy   macro-F1   stop epoch\n";
  for (const auto& f : report.folds) {
    os << "  " << std::setw(4) << f.fold_index << "   " << std::setprecision(4) << std::setw(8) << f.test_accuracy
       << "   " << std::setw(8) << f.test_macro_f1 << "   " << std::setw(10) << f.stop_epoch << '\n';
  }
  os << "  mean   " << std::setw(8) << report.mean_accuracy << "   " << std::setw(8) << report.mean_macro_f1
     << "\n\n";
  os << "Reference scores (accuracy %, mean of 5 folds, unidentified dataset; not asserted)\n";
  os << "  Foundation models        CNN     LSTM\n";
  os << "  LanguageBind           49.68    48.40\n";
  os << "  VideoMAE + AST         56.70    54.82\n";
  os << "  this run, " << nn::to_string(report.config.arch) << ": " << std::setprecision(2)
     << 100.0 * report.mean_accuracy << " accuracy / " << 100.0 * report.mean_macro_f1 << " macro-F1\n";
  return os.str();
}

CvResult cross_validate(const io::Dataset& dataset, const TrainConfig& config, const CvOptions& options) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const io::FoldPlan plan = io::make_folds(dataset, config.k, config.seed);

  CvResult result;
  result.folds.resize(config.k);
  auto run = [&](std::size_t fold) {
    if (options.progress) options.progress("fold " + std::to_string(fold) + ": training");
    FoldOutcome outcome = train_fold(dataset, plan, fold, config);
    if (options.progress) {
      std::ostringstream os;
      os << "fold " << fold << ": accuracy " << outcome.metrics.test_accuracy << ", macro-F1 "
         << outcome.metrics.test_macro_f1 << ", stopped at epoch " << outcome.log.stop_epoch;
      options.progress(os.str());
    }
    return outcome;
  };

  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  if (jobs == 1) {
    for (std::size_t fold = 0; fold < config.k; ++fold) result.folds[fold] = run(fold);
  } else {
    for (std::size_t first = 0; first < config.k; first += jobs) {
      std::vector<std::future<FoldOutcome>> wave;
      for (std::size_t fold = first; fold < std::min(config.k, first + jobs); ++fold) {
        wave.push_back(std::async(std::launch::async, run, fold));
      }
      for (std::size_t i = 0; i < wave.size(); ++i) result.folds[first + i] = wave[i].get();
    }
  }

  CvReport& report = result.report;
  report.dataset_name = dataset.name;
  report.dataset_size = dataset.clips.size();
  report.config = config;
  report.config_hash = config_hash(config);
  for (const auto& f : result.folds) report.folds.push_back(f.metrics);
  aggregate(report);
  report.created_at = utc_timestamp();
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

ModelFile fold_model_file(const CvResult& result, std::size_t fold) {
  const FoldOutcome& outcome = result.folds.at(fold);
  return {result.report.config.model_spec(), outcome.model, config_to_json(result.report.config),
          fold_metrics_json(outcome.metrics), result.report.config_hash};
}

void write_run(const CvResult& result, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  write_text(run_dir / "report.json", report_to_json(result.report).dump(2) + "\n");
  write_text(run_dir / "report.txt", report_table(result.report));
  for (std::size_t fold = 0; fold < result.folds.size(); ++fold) {
    const std::string stem = "fold-" + std::to_string(fold);
    save_model(fold_model_file(result, fold), run_dir / (stem + ".model.json"));
    write_text(run_dir / (stem + ".log.json"), log_json(result.folds[fold]).dump(2) + "\n");
  }
}

std::string run_dir_name(const CvReport& report) {
  std::string stamp;
  for (const char ch : report.created_at) {
    if (ch != '-' && ch != ':') stamp.push_back(ch);
  }
  return stamp + "-" + report.config_hash;
}

CvReport rebuild_report(const fs::path& run_dir) {
  CvReport report = report_from_json(read_json(run_dir / "report.json"));
  report.folds.clear();
  for (std::size_t fold = 0; fold < report.config.k; ++fold) {
    const auto log = read_json(run_dir / ("fold-" + std::to_string(fold) + ".log.json"));
    FoldMetrics m = fold_metrics_from_json(log.at("metrics"));
    std::vector<int> predicted;
    std::vector<int> labels;
    for (const auto& p : log.at("test_predictions")) {
      predicted.push_back(p.at("predicted").get<int>());
      labels.push_back(p.at("label").get<int>());
    }
    m.test_accuracy = metrics::accuracy(predicted, labels);
    m.test_macro_f1 = metrics::macro_f1(predicted, labels);
    report.folds.push_back(m);
  }
  aggregate(report);
  return report;
}

}  // namespace avr::train
