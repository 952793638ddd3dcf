#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "avr/embedding_io.hpp"

namespace avr::synthetic {

/// Two-class Gaussian embeddings. For modality m, class c in {0, 1}:
///   x[d] = (2c - 1) * separation * profile_m[d] + noise * N(0, 1)
/// with profile_m[d] in [0.5, 1.5] fixed per modality. The classes are
/// separated along a direction with all-positive components, so a linear rule
/// on the summed embedding separates them once separation * 768 dominates
/// noise * sqrt(768).
struct Options {
  std::size_t clips = 200;
  double separation = 0.5;
  double noise = 1.0;
  std::uint64_t seed = 1;
  std::uint32_t dim = io::kEmbeddingDim;
  std::string name = "synthetic";
};

/// Labels alternate non_humor, humor, ...; ids are "clip-0000", ...
io::Dataset make_dataset(const Options& options);

/// Writes <dir>/embeddings/<id>.{audio,video}.avre and <dir>/manifest.json;
/// returns the manifest path.
std::filesystem::path write_dataset(const io::Dataset& dataset, const std::filesystem::path& dir);

}  // namespace avr::synthetic
