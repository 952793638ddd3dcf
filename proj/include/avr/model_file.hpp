#pragma once

// Model files are UTF-8 JSON:
//   {format_version, spec, seed, parameters: {name: {shape, data}}, metrics?,
//    config?, config_hash}
// where data is base64 of little-endian binary32 values. Loading restores the
// parameters bit-exactly.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avr/nn/model.hpp"
#include "json.hpp"

namespace avr {

inline constexpr int kModelFormatVersion = 1;

struct ModelFile {
  nn::ModelSpec spec;
  nn::ModelParams params;
  /// Training configuration snapshot; null when the model was not trained
  /// through the trainer.
  nlohmann::json config;
  nlohmann::json metrics;
  std::string config_hash;
};

nlohmann::json model_to_json(const ModelFile& model);
/// Throws avr::DataError on version mismatch or a corrupted payload.
ModelFile model_from_json(const nlohmann::json& doc);

void save_model(const ModelFile& model, const std::filesystem::path& path);

struct LoadedModel {
  ModelFile model;
  std::vector<std::string> warnings;
};

/// When `expected_config_hash` is given and differs from the file's, a
/// warning is recorded rather than failing the load.
LoadedModel load_model(const std::filesystem::path& path,
                       const std::optional<std::string>& expected_config_hash = std::nullopt);

/// "<arch>-<pair>-<first 12 hex of config hash>", or "<arch>-untracked".
std::string model_id(const ModelFile& model);

}  // namespace avr
