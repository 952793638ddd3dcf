#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace avr::media {

struct Mp4Probe {
  std::string major_brand;
  /// From moov/mvhd when present.
  std::optional<double> duration_s;
};

/// Checks the upload is an ISO base media file: a leading 'ftyp' box and a
/// consistent chain of top-level boxes. Throws std::invalid_argument with
/// the reason otherwise. Decoding proper is left to the external media tool.
Mp4Probe probe_mp4(std::string_view bytes);

}  // namespace avr::media
