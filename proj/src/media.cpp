#include "avr/media.hpp"

#include <cstdint>
#include <stdexcept>

namespace avr::media {
namespace {

std::uint64_t read_be(std::string_view bytes, std::size_t offset, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) v = (v << 8) | static_cast<std::uint8_t>(bytes[offset + i]);
  return v;
}

struct Box {
  std::string_view type;
  std::string_view payload;
};

// Returns the boxes directly inside `region`; throws on a box that overruns it.
template <class Fn>
void for_each_box(std::string_view region, Fn&& fn) {
  std::size_t pos = 0;
  while (pos < region.size()) {
    if (region.size() - pos < 8) throw std::invalid_argument("truncated box header");
    std::uint64_t size = read_be(region, pos, 4);
    std::size_t header = 8;
    if (size == 1) {
      if (region.size() - pos < 16) throw std::invalid_argument("truncated large box header");
      size = read_be(region, pos + 8, 8);
      header = 16;
    } else if (size == 0) {
      size = region.size() - pos;
    }
    if (size < header || size > region.size() - pos) throw std::invalid_argument("box size out of range");
    const auto box_size = static_cast<std::size_t>(size);
    if (!fn(Box{region.substr(pos + 4, 4), region.substr(pos + header, box_size - header)})) return;
    pos += box_size;
  }
}

}  // namespace

Mp4Probe probe_mp4(std::string_view bytes) {
  if (bytes.empty()) throw std::invalid_argument("empty upload");
  if (bytes.size() < 16 || bytes.substr(4, 4) != "ftyp") throw std::invalid_argument("no leading ftyp box");
  Mp4Probe probe;
  bool first = true;
  for_each_box(bytes, [&](const Box& box) {
    if (first) {
      if (box.payload.size() < 4) throw std::invalid_argument("short ftyp box");
      probe.major_brand = std::string(box.payload.substr(0, 4));
      first = false;
    }
    if (box.type == "moov") {
      for_each_box(box.payload, [&](const Box& inner) {
        if (inner.type != "mvhd" || inner.payload.size() < 20) return true;
        const auto version = static_cast<std::uint8_t>(inner.payload[0]);
        std::uint64_t timescale = 0;
        std::uint64_t duration = 0;
        if (version == 1 && inner.payload.size() >= 32) {
          timescale = read_be(inner.payload, 20, 4);
          duration = read_be(inner.payload, 24, 8);
        } else if (version == 0) {
          timescale = read_be(inner.payload, 12, 4);
          duration = read_be(inner.payload, 16, 4);
        }
        if (timescale > 0) probe.duration_s = static_cast<double>(duration) / static_cast<double>(timescale);
        return false;
      });
    }
    return true;
  });
  return probe;
}

}  // namespace avr::media
