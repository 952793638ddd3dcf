#include <future>

#include "avr/base64.hpp"
#include "avr/service.hpp"
#include "doctest.h"
#include "support/random_model.hpp"
#include "support/service_harness.hpp"

using namespace avr;
using namespace avr::service;
using nlohmann::json;

namespace {

ModelFile trained_like_model(std::uint64_t seed, const std::string& pair = "videomae_ast") {
  SplitMix64 rng(seed);
  ModelFile m;
  m.params = nn::init_params(m.spec, seed);
  for (auto& [name, t] : m.params.tensors) {
    for (auto& v : t.storage()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
  }
  m.config = {{"extractor_pair", pair}};
  m.config_hash = "00112233445566778899";
  return m;
}

json body_of(const httplib::Result& res) { return json::parse(res->body); }

json embedding_request(const std::vector<float>& audio, const std::vector<float>& video) {
  return {{"audio", audio}, {"video", video}};
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("predict from video equals the offline model on the stub embeddings") {
  fixture::TempDir dir;
  const fixture::StubExtractor stub(dir / "stub", 1);
  fixture::ServiceHarness h(fixture::stub_config(dir / "work", stub.command()));
  const ModelFile model = trained_like_model(3);
  h.service().set_model(model);
  h.start();
  auto client = h.client();

  const auto res = fixture::post_video(client, fixture::tiny_mp4(1000, 7250));
  REQUIRE(res);
  INFO(res->body);
  REQUIRE(res->status == 200);
  const json doc = body_of(res);
  const nn::Classifier offline(model.spec, model.params);
  const auto expected = offline.probabilities(stub.audio_record.values, stub.video_record.values);
  const double p0 = doc["probabilities"]["non_humor"], p1 = doc["probabilities"]["humor"];
  CHECK(p0 == expected[0]);
  CHECK(p1 == expected[1]);
  CHECK(std::abs(p0 + p1 - 1.0) < 1e-6);
  CHECK(doc["predicted_label"] == (expected[1] > expected[0] ? "humor" : "non_humor"));
  CHECK(doc["model_id"] == "cnn-videomae_ast-001122334455");
  CHECK(doc["media_duration_s"] == doctest::Approx(7.25));
  for (const char* k : {"total_ms", "demux_ms", "extract_ms", "model_ms"}) CHECK(doc["latency_ms"][k] >= 0);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK((!std::filesystem::exists(dir / "work") || std::filesystem::is_empty(dir / "work")));
}

TEST_CASE("documented upload errors") {
  fixture::TempDir dir;
  const fixture::StubExtractor stub(dir / "stub", 1);
  const fixture::StubExtractor short_stub(dir / "short", 2, 512);
  const fixture::StubExtractor lb_stub(dir / "lb", 3, 768, io::Extractor::languagebind_audio,
                                       io::Extractor::languagebind_video);
  auto config = fixture::stub_config(dir / "work", stub.command());
  std::string expected_code;
  int expected_status = 0;
  std::string upload = fixture::tiny_mp4();
  std::string field = "video";

  SUBCASE("zero-byte upload") {
    upload.clear();
    expected_status = 400;
    expected_code = "undecodable_media";
  }
  SUBCASE("not an mp4") {
    upload = "this is plainly a text file and not any kind of video";
    expected_status = 400;
    expected_code = "undecodable_media";
  }
  SUBCASE("demux failure") {
    config.demux_video_command = "exit 1";
    expected_status = 400;
    expected_code = "undecodable_media";
  }
  SUBCASE("missing form field") {
    field = "clip";
    expected_status = 400;
    expected_code = "invalid_request";
  }
  SUBCASE("too large") {
    config.max_upload_bytes = 100;
    expected_status = 413;
    expected_code = "payload_too_large";
  }
  SUBCASE("no audio track") {
    config.demux_audio_command = "true";
    expected_status = 422;
    expected_code = "missing_audio_track";
  }
  SUBCASE("extractor exits non-zero") {
    config.extractor_command = "echo boom >&2; exit 4";
    expected_status = 502;
    expected_code = "extractor_failure";
  }
  SUBCASE("extractor writes one file") {
    config.extractor_command = "cp " + stub.audio.string() + " {out}/";
    expected_status = 502;
    expected_code = "extractor_failure";
  }
  SUBCASE("extractor writes garbage") {
    config.extractor_command = "echo junk > {out}/a.avre; echo junk > {out}/b.avre";
    expected_status = 502;
    expected_code = "extractor_failure";
  }
  SUBCASE("extractor pair differs from the model") {
    config.extractor_command = lb_stub.command();
    expected_status = 502;
    expected_code = "extractor_failure";
  }
  SUBCASE("wrong embedding dim") {
    config.extractor_command = short_stub.command();
    expected_status = 502;
    expected_code = "embedding_dim_mismatch";
  }
  SUBCASE("extractor timeout") {
    config.extractor_command = "sleep 10";
    config.extractor_timeout = std::chrono::milliseconds(200);
    expected_status = 504;
    expected_code = "extractor_timeout";
  }

  fixture::ServiceHarness h(config);
  h.service().set_model(trained_like_model(3));
  h.start();
  auto client = h.client();
  const auto res = fixture::post_video(client, upload, field);
  REQUIRE(res);
  INFO(res->body);
  CHECK(res->status == expected_status);
  const json doc = body_of(res);
  CHECK(doc["error_code"] == expected_code);
  CHECK(doc.contains("message"));
  CHECK(doc.contains("detail"));
  if (expected_code == "embedding_dim_mismatch") CHECK(doc["message"] == "embedding dim 512 != 768");
  if (upload.empty()) CHECK(doc["message"] == "undecodable media");
  CHECK((!std::filesystem::exists(dir / "work") || std::filesystem::is_empty(dir / "work")));
}

TEST_CASE("predict_embedding") {
  fixture::TempDir dir;
  fixture::ServiceHarness h(fixture::stub_config(dir.path(), "true"));
  const ModelFile model = trained_like_model(5);
  h.service().set_model(model);
  h.start();
  auto client = h.client();
  SplitMix64 rng(7);
  const auto audio = fixture::random_embedding(rng), video = fixture::random_embedding(rng);

  const auto ok = client.Post("/v1/predict_embedding", embedding_request(audio, video).dump(), "application/json");
  REQUIRE(ok);
  REQUIRE(ok->status == 200);
  const json doc = body_of(ok);
  const auto expected = nn::Classifier(model.spec, model.params).probabilities(audio, video);
  CHECK(doc["probabilities"]["humor"] == expected[1]);
  CHECK(doc["latency_ms"]["demux_ms"] == 0);
  CHECK(doc["latency_ms"]["extract_ms"] == 0);
  CHECK_FALSE(doc.contains("media_duration_s"));

  auto post = [&](const std::string& body) {
    return client.Post("/v1/predict_embedding", body, "application/json");
  };
  auto short_audio = audio;
  short_audio.pop_back();
  const auto wrong_len = post(embedding_request(short_audio, video).dump());
  CHECK(wrong_len->status == 422);
  CHECK(body_of(wrong_len)["error_code"] == "invalid_embedding");
  CHECK(body_of(wrong_len)["message"].get<std::string>().find("audio") != std::string::npos);

  json bad = embedding_request(audio, video);
  bad["video"][3] = "NaN";
  CHECK(post(bad.dump())->status == 422);
  bad["video"][3] = 1e39;
  const auto overflow = post(bad.dump());
  CHECK(overflow->status == 422);
  CHECK(body_of(overflow)["message"].get<std::string>().find("video") != std::string::npos);

  CHECK(body_of(post("{not json"))["error_code"] == "invalid_request");
  CHECK(post("{not json")->status == 400);
  CHECK(post(json{{"audio", audio}}.dump())->status == 400);
  CHECK(post("[1,2]")->status == 400);
}

TEST_CASE("zero model gives even odds through the API") {
  fixture::TempDir dir;
  fixture::ServiceHarness h(fixture::stub_config(dir.path(), "true"));
  ModelFile zero;
  for (const auto& info : nn::parameter_layout(zero.spec)) zero.params.tensors.emplace(info.name, nn::Tensor(info.shape));
  h.service().set_model(zero);
  h.start();
  auto client = h.client();
  const std::vector<float> z(768, 0.0f);
  const auto res = client.Post("/v1/predict_embedding", embedding_request(z, z).dump(), "application/json");
  const json doc = body_of(res);
  CHECK(doc["probabilities"]["non_humor"] == 0.5);
  CHECK(doc["probabilities"]["humor"] == 0.5);
  CHECK(doc["predicted_label"] == "non_humor");
}

TEST_CASE("health and model info") {
  fixture::TempDir dir;
  SUBCASE("no model yet") {
    fixture::ServiceHarness h(fixture::stub_config(dir.path(), "true"));
    h.start();
    auto client = h.client();
    const json health = body_of(client.Get("/v1/health"));
    CHECK(health["status"] == "starting");
    CHECK(health["model_id"].is_null());
    CHECK(client.Get("/v1/model")->status == 503);
    const std::vector<float> z(768, 0.0f);
    const auto res = client.Post("/v1/predict_embedding", embedding_request(z, z).dump(), "application/json");
    CHECK(res->status == 503);
    CHECK(body_of(res)["error_code"] == "model_unavailable");
  }
  SUBCASE("loaded cnn") {
    save_model(trained_like_model(1), dir / "m.json");
    auto config = fixture::stub_config(dir.path(), "true");
    config.model_path = dir / "m.json";
    fixture::ServiceHarness h(config);
    h.service().load_model();
    h.start();
    auto client = h.client();
    const json health = body_of(client.Get("/v1/health"));
    CHECK(health["status"] == "ready");
    CHECK(health["arch"] == "cnn");
    CHECK(health["extractor_pair"] == "videomae_ast");
    CHECK(health["uptime_s"] >= 0.0);
    const json info = body_of(client.Get("/v1/model"));
    CHECK(info["parameter_count"] == 29442);
    CHECK(info["spec"]["conv_filters"] == json::array({32, 64}));
  }
  SUBCASE("lazy load failure degrades") {
    fixture::write_text(dir / "bad.json", "{\"format_version\": 1");
    auto config = fixture::stub_config(dir.path(), "true");
    config.model_path = dir / "bad.json";
    config.lazy_load = true;
    fixture::ServiceHarness h(config);
    h.service().load_model_async();
    h.start();
    auto client = h.client();
    json health;
    for (int i = 0; i < 100; ++i) {
      health = body_of(client.Get("/v1/health"));
      if (health["status"] != "starting") break;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    CHECK(health["status"] == "degraded");
    CHECK(health["reason"].get<std::string>().find("parse error") != std::string::npos);
  }
  SUBCASE("eager load failure refuses to start") {
    auto config = fixture::stub_config(dir.path(), "true");
    config.model_path = dir / "missing.json";
    InferenceService svc(config);
    CHECK_THROWS_AS(svc.load_model(), DataError);
  }
}

TEST_CASE("routing, CORS and unknown paths") {
  fixture::TempDir dir;
  fixture::ServiceHarness h(fixture::stub_config(dir.path(), "true"));
  h.start();
  auto client = h.client();
  const auto pre = client.Options("/v1/predict");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  const auto missing = client.Get("/v1/nothing");
  CHECK(missing->status == 404);
  CHECK(body_of(missing)["error_code"] == "not_found");
}

TEST_CASE("concurrent requests match serial results") {
  fixture::TempDir dir;
  auto config = fixture::stub_config(dir.path(), "true");
  fixture::ServiceHarness h(config);
  const ModelFile model = trained_like_model(9);
  h.service().set_model(model);
  h.start();
  SplitMix64 rng(10);
  std::vector<json> requests;
  for (int i = 0; i < 12; ++i) {
    requests.push_back(embedding_request(fixture::random_embedding(rng), fixture::random_embedding(rng)));
  }
  std::vector<json> serial;
  auto client = h.client();
  for (const auto& r : requests) {
    serial.push_back(body_of(client.Post("/v1/predict_embedding", r.dump(), "application/json"))["probabilities"]);
  }
  std::vector<std::future<json>> pending;
  for (const auto& r : requests) {
    pending.push_back(std::async(std::launch::async, [&h, r] {
      auto c = h.client();
      return json::parse(c.Post("/v1/predict_embedding", r.dump(), "application/json")->body)["probabilities"];
    }));
  }
  for (std::size_t i = 0; i < pending.size(); ++i) CHECK(pending[i].get() == serial[i]);
}

TEST_CASE("extractor over HTTP") {
  fixture::TempDir dir;
  const fixture::StubExtractor stub(dir / "stub", 4);
  httplib::Server extractor;
  std::string seen_pair;
  extractor.Post("/extract", [&](const httplib::Request& req, httplib::Response& res) {
    seen_pair = req.get_file_value("pair").content;
    const auto a = io::encode_embedding(stub.audio_record), v = io::encode_embedding(stub.video_record);
    res.set_content(json{{"audio", base64_encode(a)}, {"video", base64_encode(v)}}.dump(), "application/json");
  });
  const int port = extractor.bind_to_any_port("127.0.0.1");
  std::thread t([&] { extractor.listen_after_bind(); });
  extractor.wait_until_ready();

  auto config = fixture::stub_config(dir / "work", "false");
  config.extractor_url = "http://127.0.0.1:" + std::to_string(port) + "/extract";
  fixture::ServiceHarness h(config);
  const ModelFile model = trained_like_model(6);
  h.service().set_model(model);
  h.start();
  auto client = h.client();
  const auto res = fixture::post_video(client, fixture::tiny_mp4());
  REQUIRE(res);
  INFO(res->body);
  CHECK(res->status == 200);
  const auto expected = nn::Classifier(model.spec, model.params).probabilities(stub.audio_record.values,
                                                                                stub.video_record.values);
  CHECK(body_of(res)["probabilities"]["humor"] == expected[1]);
  CHECK(seen_pair == "videomae-ast");

  extractor.stop();
  t.join();
  const auto down = fixture::post_video(client, fixture::tiny_mp4());
  CHECK(down->status == 502);
}

TEST_CASE("service config and error documents") {
  const ServiceConfig c;
  const json doc = service_config_to_json(c);
  CHECK(doc["extractor_timeout_ms"] == 60000);
  CHECK(doc["extractor_concurrency"] == 1);
  CHECK(c.demux_audio_command.find("-ar 16000") != std::string::npos);
  CHECK(c.demux_audio_command.find("-ac 1") != std::string::npos);
  const ServiceError e(422, "invalid_embedding", "bad", "detail here");
  CHECK(e.to_json() == json{{"error_code", "invalid_embedding"}, {"message", "bad"}, {"detail", "detail here"}});
}

}
