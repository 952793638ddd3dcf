#pragma once

#include <cstdint>
#include <limits>
#include <optional>

#include "avr/nn/model.hpp"

namespace avr::optim {

struct LossResult {
  double loss = 0.0;
  nn::Tensor64 grad_logits;
};

/// Log-sum-exp stabilized cross-entropy. grad_logits = softmax(logits) - onehot(label).
LossResult cross_entropy(const nn::Tensor64& logits, int label);

struct AdamHyper {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  /// Moments are created lazily with the parameter shapes on the first step.
  nn::ParamMap<double> first_moment;
  nn::ParamMap<double> second_moment;
  std::uint64_t step_count = 0;
};

/// One bias-corrected Adam update, computed in double and written back in the
/// parameter storage type. Every parameter must have a gradient of the same
/// shape.
template <class T>
void adam_step(nn::ParamMap<T>& params, const nn::ParamMap<double>& grads, AdamState& state);

enum class StopDecision { proceed, stop };

struct EarlyStopState {
  int patience = 5;
  double min_delta = 1e-4;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::optional<nn::ModelParams> best_params;
  int best_epoch = 0;
  int epochs_seen = 0;
  int epochs_since_improvement = 0;
  /// Set when a non-finite validation loss forced the stop.
  bool error = false;
};

/// Call once per epoch. A loss below best - min_delta counts as improvement
/// and snapshots `current`; training stops once the count of consecutive
/// non-improving epochs exceeds patience, or immediately on NaN/Inf.
StopDecision early_stop_update(EarlyStopState& state, double val_loss, const nn::ModelParams& current);

}  // namespace avr::optim
