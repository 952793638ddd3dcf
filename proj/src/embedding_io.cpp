#include "avr/embedding_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "avr/random.hpp"

namespace avr::io {
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "AVRE";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
  }
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | bytes[offset + static_cast<std::size_t>(i)];
  }
  return v;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string_view to_string(Modality modality) {
  switch (modality) {
    case Modality::audio: return "audio";
    case Modality::video: return "video";
  }
  return "unknown";
}

std::string_view to_string(Extractor extractor) {
  switch (extractor) {
    case Extractor::ast: return "ast";
    case Extractor::videomae: return "videomae";
    case Extractor::languagebind_audio: return "languagebind_audio";
    case Extractor::languagebind_video: return "languagebind_video";
  }
  return "unknown";
}

std::string_view label_name(int label) {
  return label == kHumor ? "humor" : label == kNonHumor ? "non_humor" : "invalid";
}

std::optional<Modality> parse_modality(std::string_view text) {
  if (text == "audio") return Modality::audio;
  if (text == "video") return Modality::video;
  return std::nullopt;
}

std::optional<Extractor> parse_extractor(std::string_view text) {
  for (auto e : {Extractor::ast, Extractor::videomae, Extractor::languagebind_audio,
                 Extractor::languagebind_video}) {
    if (to_string(e) == text) return e;
  }
  return std::nullopt;
}

void validate_record(const EmbeddingRecord& record, WriteOptions options) {
  if (record.values.empty()) {
    throw DataError("embedding dim must be positive");
  }
  if (!options.allow_nonstandard_dim && record.dim() != kEmbeddingDim) {
    throw DataError("embedding dim " + std::to_string(record.dim()) + " != " +
                    std::to_string(kEmbeddingDim));
  }
  for (std::size_t i = 0; i < record.values.size(); ++i) {
    if (!std::isfinite(record.values[i])) {
      throw DataError("non-finite value at index " + std::to_string(i));
    }
  }
  if (static_cast<std::uint8_t>(record.modality) > 1) {
    throw DataError("invalid modality");
  }
  if (static_cast<std::uint8_t>(record.extractor) > 3) {
    throw DataError("invalid extractor");
  }
}

std::vector<std::uint8_t> encode_embedding(const EmbeddingRecord& record, WriteOptions options) {
  validate_record(record, options);
  std::vector<std::uint8_t> out;
  out.reserve(kAvreHeaderBytes + record.values.size() * 4);
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_u32(out, kAvreVersion);
  out.push_back(static_cast<std::uint8_t>(record.modality));
  out.push_back(static_cast<std::uint8_t>(record.extractor));
  out.push_back(0);
  out.push_back(0);
  put_u32(out, record.dim());
  out.insert(out.end(), 8, std::uint8_t{0});
  for (const float v : record.values) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

EmbeddingRecord decode_embedding(std::span<const std::uint8_t> bytes, std::string clip_id) {
  if (bytes.size() < kAvreHeaderBytes) {
    throw DataError("truncated header: " + std::to_string(bytes.size()) + " < " +
                    std::to_string(kAvreHeaderBytes) + " bytes");
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw DataError("bad magic");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kAvreVersion) {
    throw DataError("unsupported version " + std::to_string(version));
  }
  EmbeddingRecord record;
  record.clip_id = std::move(clip_id);
  if (bytes[8] > 1) {
    throw DataError("invalid modality byte " + std::to_string(bytes[8]));
  }
  if (bytes[9] > 3) {
    throw DataError("invalid extractor byte " + std::to_string(bytes[9]));
  }
  record.modality = static_cast<Modality>(bytes[8]);
  record.extractor = static_cast<Extractor>(bytes[9]);
  const std::uint32_t dim = get_u32(bytes, 12);
  if (dim == 0) {
    throw DataError("embedding dim must be positive");
  }
  const std::size_t remaining = bytes.size() - kAvreHeaderBytes;
  const std::size_t payload = static_cast<std::size_t>(dim) * 4;
  if (payload > remaining) {
    throw DataError("truncated payload: dim " + std::to_string(dim) + " needs " +
                    std::to_string(payload) + " bytes, " + std::to_string(remaining) + " remain");
  }
  if (payload < remaining) {
    throw DataError("unexpected " + std::to_string(remaining - payload) + " trailing bytes");
  }
  record.values.resize(dim);
  for (std::uint32_t i = 0; i < dim; ++i) {
    record.values[i] = std::bit_cast<float>(get_u32(bytes, kAvreHeaderBytes + 4 * std::size_t{i}));
    if (!std::isfinite(record.values[i])) {
      throw DataError("non-finite value at index " + std::to_string(i));
    }
  }
  return record;
}

void write_embedding(const EmbeddingRecord& record, const fs::path& path, WriteOptions options) {
  const auto bytes = encode_embedding(record, options);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

EmbeddingRecord read_embedding(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_embedding(bytes, path.stem().string());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

DatasetManifest manifest_from_json(const nlohmann::json& doc) {
  DatasetManifest manifest;
  try {
    manifest.name = doc.value("name", std::string{});
    for (const auto& item : doc.at("clips")) {
      ClipEntry entry;
      entry.clip_id = item.at("clip_id").get<std::string>();
      entry.label = item.at("label").get<int>();
      entry.audio_path = item.at("audio_path").get<std::string>();
      entry.video_path = item.at("video_path").get<std::string>();
      manifest.clips.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  return manifest;
}

nlohmann::json manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : manifest.clips) {
    clips.push_back({{"clip_id", c.clip_id},
                     {"label", c.label},
                     {"audio_path", c.audio_path},
                     {"video_path", c.video_path}});
  }
  return {{"name", manifest.name}, {"clips", std::move(clips)}};
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open manifest " + path.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(doc);
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << manifest_to_json(manifest).dump(2) << '\n';
}

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(clips.begin(), clips.end(), [label](const Clip& c) { return c.label == label; }));
}

std::optional<std::size_t> Dataset::find(std::string_view clip_id) const {
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].clip_id == clip_id) return i;
  }
  return std::nullopt;
}

namespace {

std::string join_errors(const std::vector<std::string>& errors) {
  std::ostringstream os;
  os << errors.size() << " dataset error(s):";
  for (const auto& e : errors) os << "\n  " << e;
  return os.str();
}

}  // namespace

DatasetError::DatasetError(std::vector<std::string> errors)
    : DataError(join_errors(errors)), errors_(std::move(errors)) {}

Dataset load_dataset(const fs::path& manifest_path, std::uint32_t expected_dim) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  Dataset dataset;
  dataset.name = manifest.name;
  std::vector<std::string> errors;
  std::set<std::string> seen;

  auto load_one = [&](const ClipEntry& entry, const std::string& rel, Modality want,
                      EmbeddingRecord& dest) {
    const fs::path path = root / rel;
    if (!fs::exists(path)) {
      errors.push_back("clip " + entry.clip_id + ": missing file " + path.string());
      return false;
    }
    try {
      dest = read_embedding(path);
    } catch (const DataError& e) {
      errors.push_back("clip " + entry.clip_id + ": " + e.what());
      return false;
    }
    dest.clip_id = entry.clip_id;
    bool ok = true;
    if (dest.dim() != expected_dim) {
      errors.push_back("clip " + entry.clip_id + ": " + path.string() + " has dim " +
                       std::to_string(dest.dim()) + ", expected " + std::to_string(expected_dim));
      ok = false;
    }
    if (dest.modality != want) {
      errors.push_back("clip " + entry.clip_id + ": " + path.string() + " holds " +
                       std::string(to_string(dest.modality)) + ", expected " +
                       std::string(to_string(want)));
      ok = false;
    }
    return ok;
  };

  for (const auto& entry : manifest.clips) {
    bool ok = true;
    if (entry.clip_id.empty()) {
      errors.push_back("empty clip_id");
      ok = false;
    } else if (!seen.insert(entry.clip_id).second) {
      errors.push_back("duplicate clip_id \"" + entry.clip_id + "\"");
      ok = false;
    }
    if (entry.label != kNonHumor && entry.label != kHumor) {
      errors.push_back("clip " + entry.clip_id + ": label " + std::to_string(entry.label) +
                       " outside {0,1}");
      ok = false;
    }
    Clip clip{entry.clip_id, entry.label, {}, {}};
    ok = load_one(entry, entry.audio_path, Modality::audio, clip.audio) && ok;
    ok = load_one(entry, entry.video_path, Modality::video, clip.video) && ok;
    if (ok) dataset.clips.push_back(std::move(clip));
  }
  if (errors.empty()) {
    for (int label : {kNonHumor, kHumor}) {
      if (dataset.count_label(label) == 0) {
        errors.push_back("no clips labeled " + std::string(label_name(label)));
      }
    }
  }
  if (!errors.empty()) {
    throw DatasetError(std::move(errors));
  }
  return dataset;
}

std::vector<LabeledId> labeled_ids(const Dataset& dataset) {
  std::vector<LabeledId> out;
  out.reserve(dataset.clips.size());
  for (const auto& c : dataset.clips) out.push_back({c.clip_id, c.label});
  return out;
}

std::size_t FoldPlan::fold_of(const std::string& clip_id) const {
  const auto it = assignment.find(clip_id);
  if (it == assignment.end()) {
    throw std::out_of_range("clip " + clip_id + " is not in the fold plan");
  }
  return it->second;
}

std::vector<std::vector<std::string>> FoldPlan::folds() const {
  std::vector<std::vector<std::string>> out(k);
  for (const auto& [id, fold] : assignment) out.at(fold).push_back(id);
  return out;
}

nlohmann::json fold_plan_to_json(const FoldPlan& plan) {
  nlohmann::json assignment = nlohmann::json::object();
  for (const auto& [id, fold] : plan.assignment) assignment[id] = fold;
  return {{"k", plan.k}, {"seed", plan.seed}, {"assignment", assignment}, {"folds", plan.folds()}};
}

FoldPlan make_folds(std::span<const LabeledId> clips, std::size_t k, std::uint64_t seed) {
  if (k < 2) {
    throw std::invalid_argument("k must be >= 2, got " + std::to_string(k));
  }
  for (const auto& c : clips) {
    if (c.label != kNonHumor && c.label != kHumor) {
      throw DataError("clip " + c.clip_id + ": label " + std::to_string(c.label) + " outside {0,1}");
    }
  }
  FoldPlan plan{k, seed, {}};
  std::size_t position = 0;
  for (int label : {kNonHumor, kHumor}) {
    std::vector<std::string> ids;
    for (const auto& c : clips) {
      if (c.label == label) ids.push_back(c.clip_id);
    }
    const std::string_view name = label_name(label);
    if (ids.size() < k) {
      throw DataError("class " + std::string(name) + " has " + std::to_string(ids.size()) + " < " +
                      std::to_string(k) + " members");
    }
    std::sort(ids.begin(), ids.end());
    SplitMix64 rng(seed ^ fnv1a64(name));
    shuffle(ids, rng);
    for (const auto& id : ids) {
      if (!plan.assignment.emplace(id, position % k).second) {
        throw DataError("duplicate clip_id \"" + id + "\"");
      }
      ++position;
    }
  }
  return plan;
}

FoldPlan make_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  const auto ids = labeled_ids(dataset);
  return make_folds(ids, k, seed);
}

}  // namespace avr::io
