#include "avr/metrics.hpp"

#include <stdexcept>
#include <string>

namespace avr::metrics {

std::size_t ConfusionMatrix::total() const {
  return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
}

double ConfusionMatrix::f1(int label) const {
  const auto l = static_cast<std::size_t>(label);
  const auto other = 1 - l;
  const double tp = static_cast<double>(counts[l][l]);
  const double fp = static_cast<double>(counts[other][l]);
  const double fn = static_cast<double>(counts[l][other]);
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) {
    throw std::invalid_argument("metrics: empty input");
  }
  ConfusionMatrix m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (predictions[i] != 0 && predictions[i] != 1)) {
      throw std::invalid_argument("metrics: class index outside {0,1} at position " + std::to_string(i));
    }
    ++m.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
  }
  return m;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  const ConfusionMatrix m = confusion(predictions, labels);
  return static_cast<double>(m.counts[0][0] + m.counts[1][1]) / static_cast<double>(m.total());
}

double macro_f1(std::span<const int> predictions, std::span<const int> labels) {
  const ConfusionMatrix m = confusion(predictions, labels);
  return 0.5 * (m.f1(0) + m.f1(1));
}

}  // namespace avr::metrics
