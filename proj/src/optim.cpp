#include "avr/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace avr::optim {

LossResult cross_entropy(const nn::Tensor64& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " out of range");
  }
  const auto z = logits.data();
  double max = z[0];
  for (double v : z) max = std::max(max, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - max);
  const double log_sum_exp = max + std::log(sum);

  LossResult result{log_sum_exp - z[static_cast<std::size_t>(label)], nn::Tensor64(logits.shape())};
  for (std::size_t i = 0; i < z.size(); ++i) {
    result.grad_logits[i] = std::exp(z[i] - log_sum_exp) - (static_cast<int>(i) == label ? 1.0 : 0.0);
  }
  // Rounding can leave -0.0 or a tiny negative value for a perfect prediction.
  result.loss = std::max(result.loss, 0.0);
  return result;
}

template <class T>
void adam_step(nn::ParamMap<T>& params, const nn::ParamMap<double>& grads, AdamState& state) {
  for (const auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) {
      throw std::invalid_argument("adam_step: no gradient for " + name);
    }
    if (g->second.shape() != p.shape()) {
      throw std::invalid_argument("adam_step: gradient shape " + nn::shape_string(g->second.shape()) +
                                  " != parameter shape " + nn::shape_string(p.shape()) + " for " + name);
    }
  }
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient set does not match parameter set");
  }

  const AdamHyper& h = state.hyper;
  const auto t = static_cast<double>(state.step_count + 1);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);

  for (auto& [name, p] : params) {
    const nn::Tensor64& g = grads.at(name);
    auto& m = state.first_moment.try_emplace(name, p.shape()).first->second;
    auto& v = state.second_moment.try_emplace(name, p.shape()).first->second;
    if (m.shape() != p.shape() || v.shape() != p.shape()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for " + name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      const double updated = static_cast<double>(p[i]) - h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
      p[i] = static_cast<T>(updated);
    }
  }
  ++state.step_count;
}

template void adam_step<float>(nn::ParamMap<float>&, const nn::ParamMap<double>&, AdamState&);
template void adam_step<double>(nn::ParamMap<double>&, const nn::ParamMap<double>&, AdamState&);

StopDecision early_stop_update(EarlyStopState& state, double val_loss, const nn::ModelParams& current) {
  ++state.epochs_seen;
  if (!std::isfinite(val_loss)) {
    state.error = true;
    return StopDecision::stop;
  }
  if (val_loss < state.best_val_loss - state.min_delta) {
    state.best_val_loss = val_loss;
    state.best_params = current;
    state.best_epoch = state.epochs_seen;
    state.epochs_since_improvement = 0;
    return StopDecision::proceed;
  }
  ++state.epochs_since_improvement;
  return state.epochs_since_improvement > state.patience ? StopDecision::stop : StopDecision::proceed;
}

}  // namespace avr::optim
