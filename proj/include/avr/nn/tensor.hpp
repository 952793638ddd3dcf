#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace avr::nn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Cache-line aligned buffers. Vectorized kernels split work at the first
/// aligned element, so a fixed base alignment keeps the summation order, and
/// therefore every result bit, independent of where the allocator put the data.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Dense row-major tensor. Parameters are stored as Tensor (binary32); the
/// forward and backward passes run on Tensor64.
template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, AlignedAllocator<T>>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  BasicTensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != shape_size(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  Storage& storage() noexcept { return data_; }
  const Storage& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t l) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + l];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t l) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + l];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Same data, new shape of equal element count.
  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                  shape_string(shape));
    }
    BasicTensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    std::copy(data_.begin(), data_.end(), out.ptr());
    return out;
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// When enabled, every layer verifies its outputs are finite and throws
/// avr::DivergenceError otherwise. On by default in builds without NDEBUG.
void set_finite_checks(bool enabled) noexcept;
bool finite_checks_enabled() noexcept;

/// No-op unless finite checks are enabled.
void check_finite(const Tensor64& t, const char* op);

}  // namespace avr::nn
