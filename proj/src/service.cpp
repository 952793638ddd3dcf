#include "avr/service.hpp"

#include <atomic>
#include <cmath>
#include <csignal>
#include <fstream>
#include <iostream>

#include "avr/base64.hpp"
#include "avr/error.hpp"
#include "avr/media.hpp"
#include "avr/process.hpp"
#include "avr/random.hpp"
#include "httplib.h"

namespace avr::service {
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::int64_t elapsed_ms(Clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - since).count();
}

std::string pair_argument(const std::string& pair) {
  return pair == "languagebind" ? "languagebind" : "videomae-ast";
}

std::pair<io::Extractor, io::Extractor> expected_extractors(const std::string& pair) {
  if (pair == "languagebind") return {io::Extractor::languagebind_audio, io::Extractor::languagebind_video};
  return {io::Extractor::ast, io::Extractor::videomae};
}

// Removes the per-request scratch directory on scope exit.
class JobDir {
 public:
  explicit JobDir(const fs::path& root) {
    static std::atomic<std::uint64_t> counter{0};
    const std::uint64_t n = counter.fetch_add(1);
    const auto now = static_cast<std::uint64_t>(Clock::now().time_since_epoch().count());
    path_ = root / ("job-" + std::to_string(::getpid()) + "-" + std::to_string(n) + "-" +
                    std::to_string(mix64(now ^ n) & 0xffffff));
    fs::create_directories(path_ / "out");
  }
  ~JobDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  JobDir(const JobDir&) = delete;
  JobDir& operator=(const JobDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

bool non_empty_file(const fs::path& path) {
  std::error_code ec;
  return fs::is_regular_file(path, ec) && fs::file_size(path, ec) > 0;
}

std::string tail(const std::string& text, std::size_t n = 2000) {
  return text.size() <= n ? text : text.substr(text.size() - n);
}

io::EmbeddingRecord decode_extractor_output(std::span<const std::uint8_t> bytes, const std::string& origin) {
  try {
    return io::decode_embedding(bytes);
  } catch (const DataError& e) {
    throw ServiceError(502, "extractor_failure", "extractor produced an invalid embedding file",
                       origin + ": " + e.what());
  }
}

void send_error(httplib::Response& res, const ServiceError& e) {
  res.status = e.status();
  res.set_content(e.to_json().dump(), "application/json");
}

void send_json(httplib::Response& res, const nlohmann::json& doc) {
  res.status = 200;
  res.set_content(doc.dump(), "application/json");
}

struct Url {
  std::string origin;
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

nlohmann::json service_config_to_json(const ServiceConfig& c) {
  return {{"host", c.host},
          {"port", c.port},
          {"model_path", c.model_path.string()},
          {"extractor_command", c.extractor_command},
          {"extractor_url", c.extractor_url},
          {"demux_audio_command", c.demux_audio_command},
          {"demux_video_command", c.demux_video_command},
          {"max_upload_bytes", c.max_upload_bytes},
          {"demux_timeout_ms", c.demux_timeout.count()},
          {"extractor_timeout_ms", c.extractor_timeout.count()},
          {"request_timeout_ms", c.request_timeout.count()},
          {"extractor_concurrency", c.extractor_concurrency},
          {"worker_threads", c.worker_threads},
          {"lazy_load", c.lazy_load},
          {"cors_origin", c.cors_origin},
          {"work_dir", c.work_dir.string()}};
}

nlohmann::json prediction_to_json(const Prediction& p) {
  nlohmann::json doc = {
      {"probabilities", {{"non_humor", p.probabilities[0]}, {"humor", p.probabilities[1]}}},
      {"predicted_label", io::label_name(p.predicted_label)},
      {"latency_ms",
       {{"total_ms", p.latency.total_ms},
        {"demux_ms", p.latency.demux_ms},
        {"extract_ms", p.latency.extract_ms},
        {"model_ms", p.latency.model_ms}}},
      {"model_id", p.model_id}};
  if (p.media_duration_s) doc["media_duration_s"] = *p.media_duration_s;
  return doc;
}

ServiceError::ServiceError(int status, std::string code, const std::string& message, std::string detail)
    : std::runtime_error(message), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}

nlohmann::json ServiceError::to_json() const {
  return {{"error_code", code_}, {"message", what()}, {"detail", detail_}};
}

std::string_view to_string(ServiceStatus status) {
  switch (status) {
    case ServiceStatus::starting: return "starting";
    case ServiceStatus::ready: return "ready";
    case ServiceStatus::degraded: return "degraded";
  }
  return "unknown";
}

void InferenceService::Limiter::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return free_ > 0; });
  --free_;
}

void InferenceService::Limiter::release() {
  {
    std::lock_guard lock(mutex_);
    ++free_;
  }
  cv_.notify_one();
}

InferenceService::InferenceService(ServiceConfig config)
    : config_(std::move(config)), started_(Clock::now()), extractor_slots_(config_.extractor_concurrency) {
  if (config_.work_dir.empty()) config_.work_dir = fs::temp_directory_path() / "avr-service";
}

InferenceService::~InferenceService() {
  if (loader_.joinable()) loader_.join();
}

void InferenceService::set_model(ModelFile model) {
  auto loaded = std::make_shared<Loaded>();
  loaded->classifier = std::make_unique<nn::Classifier>(model.spec, model.params);
  loaded->model_id = model_id(model);
  loaded->extractor_pair = model.config.is_object() && model.config.contains("extractor_pair")
                               ? model.config.at("extractor_pair").get<std::string>()
                               : std::string("videomae_ast");
  loaded->file = std::move(model);
  std::lock_guard lock(mutex_);
  model_ = std::move(loaded);
  status_ = ServiceStatus::ready;
  status_reason_.clear();
}

void InferenceService::load_model() {
  LoadedModel loaded = avr::load_model(config_.model_path);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
  set_model(std::move(loaded.model));
}

void InferenceService::load_model_async() {
  {
    std::lock_guard lock(mutex_);
    status_ = ServiceStatus::starting;
  }
  loader_ = std::thread([this] {
    try {
      load_model();
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      status_ = ServiceStatus::degraded;
      status_reason_ = e.what();
    }
  });
}

std::shared_ptr<const InferenceService::Loaded> InferenceService::loaded() const {
  std::lock_guard lock(mutex_);
  if (!model_) {
    const std::string reason = status_ == ServiceStatus::degraded ? status_reason_ : "model is still loading";
    throw ServiceError(503, "model_unavailable", "model unavailable", reason);
  }
  return model_;
}

Prediction InferenceService::predict_from_embeddings(std::span<const float> audio,
                                                     std::span<const float> video) const {
  const auto started = Clock::now();
  const auto model = loaded();
  auto check = [&](std::span<const float> values, const char* field) {
    if (values.size() != model->file.spec.input_dim) {
      throw ServiceError(422, "invalid_embedding",
                         std::string(field) + ": expected " + std::to_string(model->file.spec.input_dim) +
                             " values, got " + std::to_string(values.size()));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw ServiceError(422, "invalid_embedding",
                           std::string(field) + ": non-finite value at index " + std::to_string(i));
      }
    }
  };
  check(audio, "audio");
  check(video, "video");
  Prediction p;
  p.probabilities = model->classifier->probabilities(audio, video);
  p.predicted_label = nn::argmax_label(p.probabilities);
  p.model_id = model->model_id;
  p.latency.model_ms = elapsed_ms(started);
  p.latency.total_ms = elapsed_ms(started);
  return p;
}

std::pair<io::EmbeddingRecord, io::EmbeddingRecord> InferenceService::run_extractor(
    const Loaded& model, const fs::path& job_dir) const {
  std::vector<io::EmbeddingRecord> records;
  if (!config_.extractor_url.empty()) {
    const Url url = split_url(config_.extractor_url);
    httplib::Client client(url.origin);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config_.extractor_timeout).count();
    client.set_read_timeout(static_cast<time_t>(seconds), 0);
    client.set_write_timeout(static_cast<time_t>(seconds), 0);
    std::ifstream in(job_dir / "input.mp4", std::ios::binary);
    const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    httplib::MultipartFormDataItems items = {{"video", payload, "input.mp4", "video/mp4"},
                                             {"pair", pair_argument(model.extractor_pair), "", ""}};
    const auto res = client.Post(url.path, items);
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::Write) {
        throw ServiceError(504, "extractor_timeout", "extractor did not answer in time", httplib::to_string(err));
      }
      throw ServiceError(502, "extractor_failure", "extractor unreachable", httplib::to_string(err));
    }
    if (res->status != 200) {
      throw ServiceError(502, "extractor_failure", "extractor returned HTTP " + std::to_string(res->status),
                         tail(res->body));
    }
    try {
      const auto doc = nlohmann::json::parse(res->body);
      for (const char* field : {"audio", "video"}) {
        const auto bytes = base64_decode(doc.at(field).get<std::string>());
        records.push_back(decode_extractor_output(bytes, std::string("field ") + field));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ServiceError(502, "extractor_failure", "extractor response is not the expected JSON", e.what());
    } catch (const DataError& e) {
      throw ServiceError(502, "extractor_failure", "extractor response carries invalid base64", e.what());
    }
  } else {
    const std::string command = expand_command(config_.extractor_command,
                                               {{"input", (job_dir / "input.mp4").string()},
                                                {"audio", (job_dir / "audio.wav").string()},
                                                {"video", (job_dir / "video.mp4").string()},
                                                {"out", (job_dir / "out").string()},
                                                {"pair", pair_argument(model.extractor_pair)}});
    const ProcessResult run = run_shell(command, config_.extractor_timeout);
    if (run.timed_out) {
      throw ServiceError(504, "extractor_timeout",
                         "extractor exceeded " + std::to_string(config_.extractor_timeout.count()) + " ms",
                         tail(run.output));
    }
    if (run.exit_code != 0) {
      throw ServiceError(502, "extractor_failure", "extractor exited with status " + std::to_string(run.exit_code),
                         tail(run.output));
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(job_dir / "out")) {
      if (entry.path().extension() == ".avre") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
      std::ifstream in(path, std::ios::binary);
      const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      records.push_back(decode_extractor_output(bytes, path.filename().string()));
    }
  }

  std::optional<io::EmbeddingRecord> audio;
  std::optional<io::EmbeddingRecord> video;
  for (auto& r : records) {
    auto& slot = r.modality == io::Modality::audio ? audio : video;
    if (slot) {
      throw ServiceError(502, "extractor_failure", "extractor produced more than one " +
                                                       std::string(io::to_string(r.modality)) + " embedding");
    }
    slot = std::move(r);
  }
  if (!audio || !video) {
    throw ServiceError(502, "extractor_failure", "extractor did not produce both audio and video embeddings",
                       std::to_string(records.size()) + " embedding file(s) found");
  }
  const auto expected_dim = static_cast<std::uint32_t>(model.file.spec.input_dim);
  for (const auto* r : {&*audio, &*video}) {
    if (r->dim() != expected_dim) {
      throw ServiceError(502, "embedding_dim_mismatch",
                         "embedding dim " + std::to_string(r->dim()) + " != " + std::to_string(expected_dim),
                         std::string(io::to_string(r->modality)) + " embedding");
    }
  }
  const auto [want_audio, want_video] = expected_extractors(model.extractor_pair);
  if (audio->extractor != want_audio || video->extractor != want_video) {
    throw ServiceError(502, "extractor_failure", "extractor pair does not match the model",
                       "got " + std::string(io::to_string(audio->extractor)) + "/" +
                           std::string(io::to_string(video->extractor)) + ", model trained on " +
                           model.extractor_pair);
  }
  return {std::move(*audio), std::move(*video)};
}

Prediction InferenceService::predict_from_video(std::string_view video_bytes) const {
  const auto started = Clock::now();
  const auto model = loaded();
  if (video_bytes.size() > config_.max_upload_bytes) {
    throw ServiceError(413, "payload_too_large",
                       "upload of " + std::to_string(video_bytes.size()) + " bytes exceeds limit of " +
                           std::to_string(config_.max_upload_bytes));
  }
  media::Mp4Probe probe;
  try {
    probe = media::probe_mp4(video_bytes);
  } catch (const std::invalid_argument& e) {
    throw ServiceError(400, "undecodable_media", "undecodable media", e.what());
  }

  const JobDir job(config_.work_dir);
  {
    std::ofstream out(job.path() / "input.mp4", std::ios::binary);
    out.write(video_bytes.data(), static_cast<std::streamsize>(video_bytes.size()));
    if (!out) throw ServiceError(500, "internal_error", "cannot stage upload", job.path().string());
  }
  const std::map<std::string, std::string> vars = {{"input", (job.path() / "input.mp4").string()},
                                                   {"audio", (job.path() / "audio.wav").string()},
                                                   {"video", (job.path() / "video.mp4").string()},
                                                   {"out", (job.path() / "out").string()}};

  Prediction p;
  p.media_duration_s = probe.duration_s;
  const auto demux_started = Clock::now();
  {
    const ProcessResult video_run = run_shell(expand_command(config_.demux_video_command, vars), config_.demux_timeout);
    if (video_run.timed_out || video_run.exit_code != 0 || !non_empty_file(job.path() / "video.mp4")) {
      throw ServiceError(400, "undecodable_media", "undecodable media",
                         video_run.timed_out ? "video demux timed out" : tail(video_run.output));
    }
    const ProcessResult audio_run = run_shell(expand_command(config_.demux_audio_command, vars), config_.demux_timeout);
    if (audio_run.timed_out) {
      throw ServiceError(400, "undecodable_media", "undecodable media", "audio demux timed out");
    }
    if (audio_run.exit_code != 0 || !non_empty_file(job.path() / "audio.wav")) {
      throw ServiceError(422, "missing_audio_track", "the video has no usable audio track", tail(audio_run.output));
    }
  }
  p.latency.demux_ms = elapsed_ms(demux_started);

  const auto extract_started = Clock::now();
  extractor_slots_.acquire();
  std::pair<io::EmbeddingRecord, io::EmbeddingRecord> embeddings;
  try {
    embeddings = run_extractor(*model, job.path());
  } catch (...) {
    extractor_slots_.release();
    throw;
  }
  extractor_slots_.release();
  p.latency.extract_ms = elapsed_ms(extract_started);

  const auto model_started = Clock::now();
  p.probabilities = model->classifier->probabilities(embeddings.first.values, embeddings.second.values);
  p.predicted_label = nn::argmax_label(p.probabilities);
  p.latency.model_ms = elapsed_ms(model_started);
  p.model_id = model->model_id;
  p.latency.total_ms = elapsed_ms(started);
  return p;
}

nlohmann::json InferenceService::health() const {
  std::lock_guard lock(mutex_);
  nlohmann::json doc = {{"status", to_string(status_)},
                        {"uptime_s", std::chrono::duration<double>(Clock::now() - started_).count()}};
  if (model_) {
    doc["model_id"] = model_->model_id;
    doc["arch"] = nn::to_string(model_->file.spec.arch);
    doc["extractor_pair"] = model_->extractor_pair;
  } else {
    doc["model_id"] = nullptr;
    doc["arch"] = nullptr;
    doc["extractor_pair"] = nullptr;
  }
  if (!status_reason_.empty()) doc["reason"] = status_reason_;
  return doc;
}

nlohmann::json InferenceService::model_info() const {
  const auto model = loaded();
  return {{"model_id", model->model_id},
          {"arch", nn::to_string(model->file.spec.arch)},
          {"extractor_pair", model->extractor_pair},
          {"spec", nn::spec_to_json(model->file.spec)},
          {"parameter_count", model->file.params.count()},
          {"seed", model->file.params.seed},
          {"config_hash", model->file.config_hash},
          {"metrics", model->file.metrics}};
}

std::vector<float> parse_embedding_field(const nlohmann::json& body, const std::string& field) {
  if (!body.contains(field)) {
    throw ServiceError(400, "invalid_request", "missing field '" + field + "'");
  }
  const auto& arr = body.at(field);
  if (!arr.is_array()) {
    throw ServiceError(422, "invalid_embedding", field + ": expected an array of numbers");
  }
  std::vector<float> values;
  values.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) {
      throw ServiceError(422, "invalid_embedding", field + ": element " + std::to_string(i) + " is not a number");
    }
    const double v = arr[i].get<double>();
    if (!std::isfinite(v) || std::abs(v) > 3.4028234663852886e38) {
      throw ServiceError(422, "invalid_embedding", field + ": non-finite value at index " + std::to_string(i));
    }
    values.push_back(static_cast<float>(v));
  }
  return values;
}

void InferenceService::register_routes(httplib::Server& server) {
  server.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.set_payload_max_length(config_.max_upload_bytes + (1u << 20));

  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) { send_json(res, health()); });

  server.Get("/v1/model", [this](const httplib::Request&, httplib::Response& res) {
    try {
      send_json(res, model_info());
    } catch (const ServiceError& e) {
      send_error(res, e);
    }
  });

  server.Post("/v1/predict_embedding", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error& e) {
        throw ServiceError(400, "invalid_request", "request body is not valid JSON", e.what());
      }
      if (!body.is_object()) throw ServiceError(400, "invalid_request", "request body must be a JSON object");
      const auto audio = parse_embedding_field(body, "audio");
      const auto video = parse_embedding_field(body, "video");
      send_json(res, prediction_to_json(predict_from_embeddings(audio, video)));
    } catch (const ServiceError& e) {
      send_error(res, e);
    }
  });

  server.Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      if (!req.is_multipart_form_data()) {
        throw ServiceError(400, "invalid_request", "expected multipart/form-data with field 'video'");
      }
      if (!req.has_file("video")) {
        throw ServiceError(400, "invalid_request", "missing form field 'video'");
      }
      const auto file = req.get_file_value("video");
      if (file.content.empty()) {
        throw ServiceError(400, "undecodable_media", "undecodable media", "empty upload");
      }
      send_json(res, prediction_to_json(predict_from_video(file.content)));
    } catch (const ServiceError& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      send_error(res, ServiceError(500, "internal_error", "internal error", e.what()));
    }
  });

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    std::string code = "http_" + std::to_string(res.status);
    std::string message = httplib::status_message(res.status);
    if (res.status == 413) code = "payload_too_large";
    if (res.status == 404) code = "not_found";
    res.set_content(ServiceError(res.status, code, message).to_json().dump(), "application/json");
  });
}

namespace {
std::atomic<httplib::Server*> g_running_server{nullptr};

extern "C" void handle_stop_signal(int) {
  if (auto* server = g_running_server.load()) server->stop();
}
}  // namespace

int run_server(const ServiceConfig& config) {
  InferenceService service(config);
  if (config.lazy_load) {
    service.load_model_async();
  } else {
    service.load_model();
  }
  httplib::Server server;
  const std::size_t workers = std::max<std::size_t>(2, config.worker_threads);
  server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  const auto timeout_s = std::chrono::duration_cast<std::chrono::seconds>(config.request_timeout).count();
  server.set_read_timeout(static_cast<time_t>(timeout_s), 0);
  server.set_write_timeout(static_cast<time_t>(timeout_s), 0);
  service.register_routes(server);
  if (!server.bind_to_port(config.host, config.port)) {
    throw std::runtime_error("cannot bind " + config.host + ":" + std::to_string(config.port));
  }
  g_running_server.store(&server);
  std::signal(SIGINT, handle_stop_signal);
  std::signal(SIGTERM, handle_stop_signal);
  std::cerr << "listening on http://" << config.host << ":" << config.port << '\n';
  const bool ok = server.listen_after_bind();
  g_running_server.store(nullptr);
  return ok ? 0 : 3;
}

}  // namespace avr::service
