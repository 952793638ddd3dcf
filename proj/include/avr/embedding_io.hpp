#pragma once

// On-disk embedding files (AVRE), dataset manifests, and fold partitioning.
//
// AVRE layout, little-endian:
//   0..3   magic "AVRE"
//   4..7   u32 version (1)
//   8      u8 modality (0 audio, 1 video)
//   9      u8 extractor (0 ast, 1 videomae, 2 languagebind_audio, 3 languagebind_video)
//   10..11 reserved, 0
//   12..15 u32 dim
//   16..23 reserved, 0
//   24..   dim x IEEE-754 binary32

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avr/error.hpp"
#include "json.hpp"

namespace avr::io {

inline constexpr std::uint32_t kEmbeddingDim = 768;
inline constexpr std::uint32_t kAvreVersion = 1;
inline constexpr std::size_t kAvreHeaderBytes = 24;

enum class Modality : std::uint8_t { audio = 0, video = 1 };
enum class Extractor : std::uint8_t { ast = 0, videomae = 1, languagebind_audio = 2, languagebind_video = 3 };

/// Class indices are fixed everywhere: probabilities are reported as
/// [non_humor, humor].
enum Label : int { kNonHumor = 0, kHumor = 1 };
inline constexpr int kNumClasses = 2;

std::string_view to_string(Modality modality);
std::string_view to_string(Extractor extractor);
std::string_view label_name(int label);
std::optional<Modality> parse_modality(std::string_view text);
std::optional<Extractor> parse_extractor(std::string_view text);

struct EmbeddingRecord {
  std::string clip_id;
  Modality modality = Modality::audio;
  Extractor extractor = Extractor::ast;
  std::vector<float> values;

  std::uint32_t dim() const { return static_cast<std::uint32_t>(values.size()); }
  bool operator==(const EmbeddingRecord&) const = default;
};

struct WriteOptions {
  /// Permit dim != 768 (test fixtures, experiments with other encoders).
  bool allow_nonstandard_dim = false;
};

/// Throws DataError naming the first violated invariant.
void validate_record(const EmbeddingRecord& record, WriteOptions options = {});

std::vector<std::uint8_t> encode_embedding(const EmbeddingRecord& record, WriteOptions options = {});

/// Parses an AVRE payload. The format carries no clip id; the caller
/// supplies one.
EmbeddingRecord decode_embedding(std::span<const std::uint8_t> bytes, std::string clip_id = {});

void write_embedding(const EmbeddingRecord& record, const std::filesystem::path& path,
                     WriteOptions options = {});

/// The returned record's clip_id is the file stem.
EmbeddingRecord read_embedding(const std::filesystem::path& path);

struct ClipEntry {
  std::string clip_id;
  int label = kNonHumor;
  std::string audio_path;
  std::string video_path;
};

struct DatasetManifest {
  std::string name;
  std::vector<ClipEntry> clips;
};

DatasetManifest manifest_from_json(const nlohmann::json& doc);
nlohmann::json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct Clip {
  std::string clip_id;
  int label = kNonHumor;
  EmbeddingRecord audio;
  EmbeddingRecord video;
};

struct Dataset {
  std::string name;
  std::vector<Clip> clips;

  std::size_t count_label(int label) const;
  /// Index of `clip_id` in clips, or nullopt.
  std::optional<std::size_t> find(std::string_view clip_id) const;
};

/// Carries every problem found while loading, not just the first.
class DatasetError : public DataError {
 public:
  explicit DatasetError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const noexcept { return errors_; }

 private:
  std::vector<std::string> errors_;
};

/// Loads the manifest and every referenced embedding; paths are resolved
/// relative to the manifest's directory. Throws DatasetError listing all
/// validation failures.
Dataset load_dataset(const std::filesystem::path& manifest_path,
                     std::uint32_t expected_dim = kEmbeddingDim);

struct LabeledId {
  std::string clip_id;
  int label = kNonHumor;
};

std::vector<LabeledId> labeled_ids(const Dataset& dataset);

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> assignment;

  std::size_t fold_of(const std::string& clip_id) const;
  /// Clip ids per fold, each list sorted.
  std::vector<std::vector<std::string>> folds() const;
  bool operator==(const FoldPlan&) const = default;
};

nlohmann::json fold_plan_to_json(const FoldPlan& plan);

/// Stratified k-way partition. Each class's ids are sorted, shuffled with
/// SplitMix64(seed ^ fnv1a64(class name)) and dealt round-robin; the dealing
/// position carries over from non_humor to humor so fold sizes stay within 1.
FoldPlan make_folds(std::span<const LabeledId> clips, std::size_t k, std::uint64_t seed);
FoldPlan make_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed);

}  // namespace avr::io
