#include "avr/synthetic.hpp"

#include <cstdio>
#include <stdexcept>

#include "avr/random.hpp"

namespace avr::synthetic {
namespace fs = std::filesystem;

io::Dataset make_dataset(const Options& options) {
  if (options.clips < 2) throw std::invalid_argument("synthetic dataset needs at least 2 clips");
  std::vector<std::vector<double>> profiles;
  for (const std::uint64_t modality : {0u, 1u}) {
    SplitMix64 rng(derive_seed(options.seed, {fnv1a64("profile"), modality}));
    std::vector<double> profile(options.dim);
    for (auto& p : profile) p = 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
    profiles.push_back(std::move(profile));
  }

  io::Dataset dataset;
  dataset.name = options.name;
  for (std::size_t i = 0; i < options.clips; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "clip-%04zu", i);
    io::Clip clip;
    clip.clip_id = id;
    clip.label = static_cast<int>(i % 2);
    const double sign = clip.label == io::kHumor ? 1.0 : -1.0;
    SplitMix64 rng(derive_seed(options.seed, {fnv1a64("clip"), i}));
    for (const auto modality : {io::Modality::audio, io::Modality::video}) {
      const auto& profile = profiles[static_cast<std::size_t>(modality)];
      io::EmbeddingRecord record;
      record.clip_id = clip.clip_id;
      record.modality = modality;
      record.extractor = modality == io::Modality::audio ? io::Extractor::ast : io::Extractor::videomae;
      record.values.resize(options.dim);
      for (std::size_t d = 0; d < options.dim; ++d) {
        record.values[d] = static_cast<float>(sign * options.separation * profile[d] + options.noise * rng.normal());
      }
      (modality == io::Modality::audio ? clip.audio : clip.video) = std::move(record);
    }
    dataset.clips.push_back(std::move(clip));
  }
  return dataset;
}

fs::path write_dataset(const io::Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "embeddings");
  io::DatasetManifest manifest;
  manifest.name = dataset.name;
  const io::WriteOptions options{.allow_nonstandard_dim = true};
  for (const auto& clip : dataset.clips) {
    const std::string audio_rel = "embeddings/" + clip.clip_id + ".audio.avre";
    const std::string video_rel = "embeddings/" + clip.clip_id + ".video.avre";
    io::write_embedding(clip.audio, dir / audio_rel, options);
    io::write_embedding(clip.video, dir / video_rel, options);
    manifest.clips.push_back({clip.clip_id, clip.label, audio_rel, video_rel});
  }
  const fs::path manifest_path = dir / "manifest.json";
  io::write_manifest(manifest, manifest_path);
  return manifest_path;
}

}  // namespace avr::synthetic
