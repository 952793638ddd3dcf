#pragma once

// HTTP inference service.
//
//   POST /v1/predict             multipart form, field "video" (mp4)
//   POST /v1/predict_embedding   JSON {"audio": [768 floats], "video": [768 floats]}
//   GET  /v1/health
//   GET  /v1/model
//
// Successful predictions return the Prediction document; failures return
// {"error_code", "message", "detail"} with the HTTP status listed below.
//
//   400 invalid_request        malformed form/JSON, missing field
//   400 undecodable_media      empty or non-mp4 upload, demux failure
//   413 payload_too_large      upload above max_upload_bytes
//   422 missing_audio_track    the container has no audio stream
//   422 invalid_embedding      wrong length or non-finite values
//   502 extractor_failure      extractor exited non-zero or produced bad files
//   502 embedding_dim_mismatch extractor output dim != 768
//   503 model_unavailable      model still loading or failed to load
//   504 extractor_timeout      extractor exceeded its time budget

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "avr/embedding_io.hpp"
#include "avr/model_file.hpp"
#include "avr/nn/model.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace avr::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path model_path;
  /// Placeholders: {input} uploaded mp4, {audio} 16 kHz mono wav, {video}
  /// video-only stream, {out} directory the extractor writes AVRE files
  /// into, {pair} videomae-ast | languagebind.
  std::string extractor_command = "avr-extract extract --pair {pair} --in {input} --out {out}";
  /// When non-empty the extractor is reached over HTTP instead (POST
  /// multipart field "video", response {"audio": base64 AVRE, "video": base64 AVRE}).
  std::string extractor_url;
  std::string demux_audio_command = "ffmpeg -nostdin -y -loglevel error -i {input} -vn -ac 1 -ar 16000 -f wav {audio}";
  std::string demux_video_command = "ffmpeg -nostdin -y -loglevel error -i {input} -an -c:v copy {video}";
  std::size_t max_upload_bytes = 256u << 20;
  std::chrono::milliseconds demux_timeout{60'000};
  std::chrono::milliseconds extractor_timeout{60'000};
  std::chrono::milliseconds request_timeout{120'000};
  std::size_t extractor_concurrency = 1;
  std::size_t worker_threads = 8;
  /// Start serving before the model is loaded; health reports "starting",
  /// then "ready" or "degraded".
  bool lazy_load = false;
  std::string cors_origin = "*";
  /// Scratch space for per-request files; defaults to <tmp>/avr-service.
  std::filesystem::path work_dir;
};

nlohmann::json service_config_to_json(const ServiceConfig& config);

struct Latency {
  std::int64_t total_ms = 0;
  std::int64_t demux_ms = 0;
  std::int64_t extract_ms = 0;
  std::int64_t model_ms = 0;
};

struct Prediction {
  /// [non_humor, humor]
  std::array<double, 2> probabilities{};
  int predicted_label = 0;
  Latency latency;
  std::string model_id;
  std::optional<double> media_duration_s;
};

nlohmann::json prediction_to_json(const Prediction& prediction);

class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message, std::string detail = {});

  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  nlohmann::json to_json() const;

 private:
  int status_;
  std::string code_;
  std::string detail_;
};

enum class ServiceStatus { starting, ready, degraded };
std::string_view to_string(ServiceStatus status);

class InferenceService {
 public:
  explicit InferenceService(ServiceConfig config);
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  /// Loads config.model_path synchronously; throws on failure.
  void load_model();
  /// Loads in a background thread (lazy mode); failures mark the service
  /// degraded instead of throwing.
  void load_model_async();
  /// Installs an already-built model.
  void set_model(ModelFile model);

  Prediction predict_from_embeddings(std::span<const float> audio, std::span<const float> video) const;
  Prediction predict_from_video(std::string_view video_bytes) const;

  nlohmann::json health() const;
  nlohmann::json model_info() const;

  void register_routes(httplib::Server& server);
  const ServiceConfig& config() const noexcept { return config_; }

 private:
  struct Loaded {
    ModelFile file;
    std::unique_ptr<nn::Classifier> classifier;
    std::string model_id;
    std::string extractor_pair;
  };

  std::shared_ptr<const Loaded> loaded() const;
  std::pair<io::EmbeddingRecord, io::EmbeddingRecord> run_extractor(const Loaded& model,
                                                                    const std::filesystem::path& job_dir) const;

  class Limiter {
   public:
    explicit Limiter(std::size_t slots) : free_(std::max<std::size_t>(1, slots)) {}
    void acquire();
    void release();

   private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::size_t free_;
  };

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Loaded> model_;
  ServiceStatus status_ = ServiceStatus::starting;
  std::string status_reason_;
  std::chrono::steady_clock::time_point started_;
  mutable Limiter extractor_slots_;
  std::thread loader_;
};

/// Validates a single embedding vector from the JSON API; throws
/// ServiceError(422, invalid_embedding) naming `field`.
std::vector<float> parse_embedding_field(const nlohmann::json& body, const std::string& field);

/// Loads the model (unless lazy), binds, and serves until SIGINT/SIGTERM.
/// Returns 0 on clean shutdown; throws on startup failure.
int run_server(const ServiceConfig& config);

}  // namespace avr::service
