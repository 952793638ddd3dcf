#pragma once

#include <algorithm>
#include <string>

#include "avr/nn/model.hpp"
#include "avr/optim.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradCheck {
  double max_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
  bool all_finite = true;
};

/// Central-difference check of model_backward on the eval-mode
/// cross-entropy loss, sampling `per_tensor` coordinates of every parameter.
inline GradCheck model_gradient_check(const avr::nn::ModelSpec& spec, std::uint64_t seed, std::size_t per_tensor) {
  using namespace avr;
  SplitMix64 rng(seed);
  auto params = nn::init_params(spec, seed).widen();
  // Nonzero biases so every path carries gradient.
  for (auto& [name, t] : params) {
    if (name.find("bias") != std::string::npos) {
      for (auto& v : t.storage()) v += rng.uniform(-0.1, 0.1);
    }
  }
  std::vector<float> audio(spec.input_dim), video(spec.input_dim);
  for (auto& v : audio) v = static_cast<float>(rng.normal());
  for (auto& v : video) v = static_cast<float>(rng.normal());
  const int label = static_cast<int>(rng.below(2));

  auto loss = [&] {
    return optim::cross_entropy(nn::model_forward(spec, params, audio, video, nn::Mode::eval), label).loss;
  };
  nn::ForwardCache cache;
  const auto logits = nn::model_forward(spec, params, audio, video, nn::Mode::eval, nullptr, &cache);
  const auto grads = nn::model_backward(spec, params, cache, optim::cross_entropy(logits, label).grad_logits);

  GradCheck result;
  for (auto& [name, tensor] : params) {
    const auto& analytic = grads.at(name);
    result.all_finite = result.all_finite && analytic.all_finite();
    const std::size_t n = std::min(per_tensor, tensor.size());
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t i = n == tensor.size() ? s : static_cast<std::size_t>(rng.below(tensor.size()));
      const double numeric = central_difference(loss, tensor, i);
      const double err = relative_error(analytic[i], numeric);
      ++result.checked;
      if (err > result.max_error) {
        result.max_error = err;
        result.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace oracle
