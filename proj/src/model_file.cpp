#include "avr/model_file.hpp"

#include <bit>
#include <fstream>

#include "avr/base64.hpp"
#include "avr/error.hpp"

namespace avr {
namespace fs = std::filesystem;

namespace {

std::string encode_floats(std::span<const float> values) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 4);
  for (const float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int shift = 0; shift < 32; shift += 8) bytes.push_back(static_cast<std::uint8_t>(bits >> shift));
  }
  return base64_encode(bytes);
}

std::vector<float> decode_floats(const std::string& text, std::size_t expected, const std::string& name) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != expected * 4) {
    throw DataError("parameter " + name + ": payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected * 4));
  }
  std::vector<float> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | bytes[4 * i + static_cast<std::size_t>(b)];
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace

nlohmann::json model_to_json(const ModelFile& model) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : model.params.tensors) {
    params[name] = {{"shape", t.shape()}, {"data", encode_floats(t.data())}};
  }
  nlohmann::json doc = {{"format_version", kModelFormatVersion},
                        {"spec", nn::spec_to_json(model.spec)},
                        {"seed", model.params.seed},
                        {"parameters", std::move(params)},
                        {"config_hash", model.config_hash}};
  if (!model.metrics.is_null()) doc["metrics"] = model.metrics;
  if (!model.config.is_null()) doc["config"] = model.config;
  return doc;
}

ModelFile model_from_json(const nlohmann::json& doc) {
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw DataError("unsupported model format_version " + std::to_string(version));
    }
    ModelFile model;
    model.spec = nn::spec_from_json(doc.at("spec"));
    model.params.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& [name, entry] : doc.at("parameters").items()) {
      nn::Shape shape = entry.at("shape").get<nn::Shape>();
      auto data = decode_floats(entry.at("data").get<std::string>(), nn::shape_size(shape), name);
      model.params.tensors.emplace(name, nn::Tensor(std::move(shape), std::move(data)));
    }
    for (const auto& info : nn::parameter_layout(model.spec)) {
      const auto it = model.params.tensors.find(info.name);
      if (it == model.params.tensors.end()) throw DataError("model file lacks parameter " + info.name);
      if (it->second.shape() != info.shape) {
        throw DataError("parameter " + info.name + " has shape " + nn::shape_string(it->second.shape()) +
                        ", spec requires " + nn::shape_string(info.shape));
      }
    }
    if (model.params.tensors.size() != nn::parameter_layout(model.spec).size()) {
      throw DataError("model file carries parameters the spec does not define");
    }
    model.config_hash = doc.value("config_hash", std::string{});
    if (doc.contains("metrics")) model.metrics = doc.at("metrics");
    if (doc.contains("config")) model.config = doc.at("config");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

void save_model(const ModelFile& model, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << model_to_json(model).dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

LoadedModel load_model(const fs::path& path, const std::optional<std::string>& expected_config_hash) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("model file " + path.string() + ": parse error: " + e.what());
  }
  LoadedModel loaded{model_from_json(doc), {}};
  if (expected_config_hash && *expected_config_hash != loaded.model.config_hash) {
    loaded.warnings.push_back("config hash mismatch: file has '" + loaded.model.config_hash + "', expected '" +
                              *expected_config_hash + "'");
  }
  return loaded;
}

std::string model_id(const ModelFile& model) {
  std::string id(nn::to_string(model.spec.arch));
  if (model.config.is_object() && model.config.contains("extractor_pair")) {
    id += "-" + model.config.at("extractor_pair").get<std::string>();
  }
  id += model.config_hash.empty() ? "-untracked" : "-" + model.config_hash.substr(0, 12);
  return id;
}

}  // namespace avr
