#include "avr/nn/tensor.hpp"

#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "avr/error.hpp"

namespace avr::nn {
namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

// Layer outputs are a few hundred KiB each; keep them on the heap instead of
// a fresh mmap per allocation.
[[maybe_unused]] const bool g_allocator_tuned = [] {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  return true;
}();

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void set_finite_checks(bool enabled) noexcept { g_finite_checks.store(enabled); }

bool finite_checks_enabled() noexcept { return g_finite_checks.load(std::memory_order_relaxed); }

void check_finite(const Tensor64& t, const char* op) {
  if (!finite_checks_enabled()) return;
  const auto data = t.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw DivergenceError(std::string(op) + ": non-finite output at index " + std::to_string(i));
    }
  }
}

}  // namespace avr::nn
