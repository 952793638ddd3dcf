#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "avr/embedding_io.hpp"
#include "avr/random.hpp"

namespace fixture {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "avr-test") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

inline std::string box(const std::string& type, const std::string& payload) {
  return be32(static_cast<std::uint32_t>(8 + payload.size())) + type + payload;
}

/// Minimal mp4: ftyp + moov/mvhd (version 0) declaring `duration / timescale` seconds.
inline std::string tiny_mp4(std::uint32_t timescale = 1000, std::uint32_t duration = 4500) {
  const std::string ftyp = box("ftyp", std::string("isom") + be32(512) + "isomiso2mp41");
  std::string mvhd = std::string(4, '\0') + be32(0) + be32(0) + be32(timescale) + be32(duration);
  mvhd += std::string(80, '\0');
  return ftyp + box("moov", box("mvhd", mvhd)) + box("mdat", std::string(64, 'x'));
}

inline std::vector<float> random_embedding(avr::SplitMix64& rng, std::size_t dim = avr::io::kEmbeddingDim) {
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes a manifest of `n` clips alternating labels, with random embeddings.
inline fs::path write_small_dataset(const fs::path& dir, std::size_t n, std::uint64_t seed = 3,
                                    std::uint32_t dim = avr::io::kEmbeddingDim) {
  namespace io = avr::io;
  avr::SplitMix64 rng(seed);
  io::DatasetManifest manifest{"small", {}};
  fs::create_directories(dir / "emb");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "c" + std::to_string(i);
    const io::WriteOptions options{dim != io::kEmbeddingDim};
    io::write_embedding({id, io::Modality::audio, io::Extractor::ast, random_embedding(rng, dim)},
                        dir / "emb" / (id + ".audio.avre"), options);
    io::write_embedding({id, io::Modality::video, io::Extractor::videomae, random_embedding(rng, dim)},
                        dir / "emb" / (id + ".video.avre"), options);
    manifest.clips.push_back({id, static_cast<int>(i % 2), "emb/" + id + ".audio.avre", "emb/" + id + ".video.avre"});
  }
  io::write_manifest(manifest, dir / "manifest.json");
  return dir / "manifest.json";
}

}  // namespace fixture
