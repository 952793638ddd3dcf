#pragma once

#include <cstdint>

#include "avr/nn/tensor.hpp"
#include "avr/random.hpp"

namespace avr::nn {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// 1D convolution, valid padding, stride 1.
//   out[o, t] = bias[o] + sum_{c,j} kernels[o, c, j] * input[c, t + j]
// ---------------------------------------------------------------------------

Tensor64 conv1d_forward(const Tensor64& input, const Tensor64& kernels, const Tensor64& bias);

struct Conv1dGrads {
  Tensor64 input;
  Tensor64 kernels;
  Tensor64 bias;
};

Conv1dGrads conv1d_backward(const Tensor64& input, const Tensor64& kernels, const Tensor64& upstream);

// ---------------------------------------------------------------------------
// Fully connected: out = weight * x + bias, weight is [out, in].
// ---------------------------------------------------------------------------

Tensor64 dense_forward(const Tensor64& x, const Tensor64& weight, const Tensor64& bias);

struct DenseGrads {
  Tensor64 input;
  Tensor64 weight;
  Tensor64 bias;
};

DenseGrads dense_backward(const Tensor64& x, const Tensor64& weight, const Tensor64& upstream);

Tensor64 relu_forward(const Tensor64& x);
/// `x` is the pre-activation input to relu_forward.
Tensor64 relu_backward(const Tensor64& x, const Tensor64& upstream);

/// Max-subtracted softmax over a 1-D tensor.
Tensor64 softmax(const Tensor64& logits);

/// [C, L] -> [C], mean over L.
Tensor64 global_avg_pool(const Tensor64& x);
Tensor64 global_avg_pool_backward(const Tensor64& upstream, std::size_t length);

// ---------------------------------------------------------------------------
// Inverted dropout. In train mode each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate); eval mode is the identity.
// ---------------------------------------------------------------------------

struct DropoutResult {
  Tensor64 output;
  /// Per-element multiplier applied (0 or 1/(1-rate)); empty in eval mode.
  Tensor64 mask;
};

DropoutResult dropout_forward(const Tensor64& x, double rate, Mode mode, SplitMix64& rng);
Tensor64 dropout_backward(const Tensor64& mask, const Tensor64& upstream);

// ---------------------------------------------------------------------------
// Single-layer LSTM. Gate rows are stacked [i; f; g; o], each H wide:
//   z_t = W_x x_t + W_h h_{t-1} + b
//   i = sigmoid, f = sigmoid, g = tanh, o = sigmoid
//   c_t = f * c_{t-1} + i * g,  h_t = o * tanh(c_t)
// ---------------------------------------------------------------------------

struct LstmWeights {
  const Tensor64& input_weights;      // [4H, D]
  const Tensor64& recurrent_weights;  // [4H, H]
  const Tensor64& bias;               // [4H]

  std::size_t hidden() const { return recurrent_weights.dim(1); }
  std::size_t input_size() const { return input_weights.dim(1); }
};

struct LstmCache {
  Tensor64 input;        // [L, D]
  Tensor64 gates;        // [L, 4H] post-activation
  Tensor64 cells;        // [L + 1, H], row 0 is c0
  Tensor64 hiddens;      // [L + 1, H], row 0 is h0
  Tensor64 cell_tanh;    // [L, H]
  bool valid = false;
};

struct LstmOutput {
  Tensor64 h_seq;   // [L, H]
  Tensor64 h_last;  // [H]
  Tensor64 c_last;  // [H]
};

LstmOutput lstm_forward(const Tensor64& input, const LstmWeights& weights, const Tensor64& h0,
                        const Tensor64& c0, LstmCache* cache = nullptr);

struct LstmGrads {
  Tensor64 input;
  Tensor64 input_weights;
  Tensor64 recurrent_weights;
  Tensor64 bias;
  Tensor64 h0;
  Tensor64 c0;
};

/// Backpropagation through time. `grad_h_seq` may be empty (no gradient
/// flows into the per-step outputs); `grad_h_last` and `grad_c_last` may
/// also be empty.
LstmGrads lstm_backward(const LstmCache& cache, const LstmWeights& weights, const Tensor64& grad_h_seq,
                        const Tensor64& grad_h_last, const Tensor64& grad_c_last);

}  // namespace avr::nn
