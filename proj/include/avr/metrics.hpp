#pragma once

#include <array>
#include <cstddef>
#include <span>

namespace avr::metrics {

/// 2x2 counts, rows = true label, cols = predicted label.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 2>, 2> counts{};

  std::size_t total() const;
  /// 2PR/(P+R) for `label`, 0 when P+R == 0.
  double f1(int label) const;
};

/// Throws std::invalid_argument on length mismatch, empty input or labels
/// outside {0, 1}.
ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Unweighted mean of the two per-class F1 scores.
double macro_f1(std::span<const int> predictions, std::span<const int> labels);

}  // namespace avr::metrics
