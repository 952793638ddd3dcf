#include "avr/nn/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace avr::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatrixMap as_matrix(const Tensor64& t, std::size_t rows, std::size_t cols) {
  return {t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

MatrixMap as_matrix(Tensor64& t, std::size_t rows, std::size_t cols) {
  return {t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

ConstVectorMap as_vector(const Tensor64& t) { return {t.ptr(), static_cast<Eigen::Index>(t.size())}; }
VectorMap as_vector(Tensor64& t) { return {t.ptr(), static_cast<Eigen::Index>(t.size())}; }

void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

// cols[(c * K + j), t] = input[c, t + j]
Tensor64 im2col(const Tensor64& input, std::size_t kernel) {
  const std::size_t channels = input.dim(0);
  const std::size_t length = input.dim(1);
  const std::size_t out_len = length - kernel + 1;
  Tensor64 cols({channels * kernel, out_len});
  for (std::size_t c = 0; c < channels; ++c) {
    const double* row = input.ptr() + c * length;
    for (std::size_t j = 0; j < kernel; ++j) {
      std::copy_n(row + j, out_len, cols.ptr() + (c * kernel + j) * out_len);
    }
  }
  return cols;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor64 conv1d_forward(const Tensor64& input, const Tensor64& kernels, const Tensor64& bias) {
  require(input.rank() == 2, "conv1d: input must be [C_in, L], got " + shape_string(input.shape()));
  require(kernels.rank() == 3, "conv1d: kernels must be [C_out, C_in, K], got " +
                                   shape_string(kernels.shape()));
  const std::size_t out_channels = kernels.dim(0);
  const std::size_t in_channels = kernels.dim(1);
  const std::size_t k = kernels.dim(2);
  require(input.dim(0) == in_channels, "conv1d: input has " + std::to_string(input.dim(0)) +
                                           " channels, kernels expect " + std::to_string(in_channels));
  require(bias.size() == out_channels, "conv1d: bias length mismatch");
  require(k >= 1, "conv1d: kernel size must be positive");
  require(input.dim(1) >= k, "conv1d: input length " + std::to_string(input.dim(1)) +
                                 " < kernel size " + std::to_string(k));
  const std::size_t out_len = input.dim(1) - k + 1;
  const Tensor64 cols = im2col(input, k);
  Tensor64 out({out_channels, out_len});
  auto out_m = as_matrix(out, out_channels, out_len);
  out_m.noalias() = as_matrix(kernels, out_channels, in_channels * k) * as_matrix(cols, in_channels * k, out_len);
  out_m.colwise() += as_vector(bias);
  check_finite(out, "conv1d_forward");
  return out;
}

Conv1dGrads conv1d_backward(const Tensor64& input, const Tensor64& kernels, const Tensor64& upstream) {
  require(input.rank() == 2 && kernels.rank() == 3 && upstream.rank() == 2,
          "conv1d_backward: rank mismatch");
  const std::size_t out_channels = kernels.dim(0);
  const std::size_t in_channels = kernels.dim(1);
  const std::size_t k = kernels.dim(2);
  const std::size_t length = input.dim(1);
  require(input.dim(0) == in_channels && length >= k, "conv1d_backward: input shape mismatch");
  const std::size_t out_len = length - k + 1;
  require(upstream.dim(0) == out_channels && upstream.dim(1) == out_len,
          "conv1d_backward: upstream shape " + shape_string(upstream.shape()) + " mismatch");

  const Tensor64 cols = im2col(input, k);
  const auto up = as_matrix(upstream, out_channels, out_len);
  Conv1dGrads grads{Tensor64(input.shape()), Tensor64(kernels.shape()), Tensor64({out_channels})};
  as_matrix(grads.kernels, out_channels, in_channels * k).noalias() =
      up * as_matrix(cols, in_channels * k, out_len).transpose();
  as_vector(grads.bias) = up.rowwise().sum();

  Tensor64 grad_cols({in_channels * k, out_len});
  as_matrix(grad_cols, in_channels * k, out_len).noalias() =
      as_matrix(kernels, out_channels, in_channels * k).transpose() * up;
  for (std::size_t c = 0; c < in_channels; ++c) {
    double* dst = grads.input.ptr() + c * length;
    for (std::size_t j = 0; j < k; ++j) {
      const double* src = grad_cols.ptr() + (c * k + j) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) dst[t + j] += src[t];
    }
  }
  return grads;
}

Tensor64 dense_forward(const Tensor64& x, const Tensor64& weight, const Tensor64& bias) {
  require(weight.rank() == 2, "dense: weight must be [out, in]");
  require(x.size() == weight.dim(1), "dense: input length " + std::to_string(x.size()) +
                                         " != weight columns " + std::to_string(weight.dim(1)));
  require(bias.size() == weight.dim(0), "dense: bias length mismatch");
  Tensor64 out({weight.dim(0)});
  as_vector(out).noalias() = as_matrix(weight, weight.dim(0), weight.dim(1)) * as_vector(x) + as_vector(bias);
  check_finite(out, "dense_forward");
  return out;
}

DenseGrads dense_backward(const Tensor64& x, const Tensor64& weight, const Tensor64& upstream) {
  require(weight.rank() == 2 && x.size() == weight.dim(1) && upstream.size() == weight.dim(0),
          "dense_backward: shape mismatch");
  const auto w = as_matrix(weight, weight.dim(0), weight.dim(1));
  DenseGrads grads{Tensor64(x.shape()), Tensor64(weight.shape()), Tensor64({weight.dim(0)})};
  as_vector(grads.input).noalias() = w.transpose() * as_vector(upstream);
  as_matrix(grads.weight, weight.dim(0), weight.dim(1)).noalias() =
      as_vector(upstream) * as_vector(x).transpose();
  as_vector(grads.bias) = as_vector(upstream);
  return grads;
}

Tensor64 relu_forward(const Tensor64& x) {
  Tensor64 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor64 relu_backward(const Tensor64& x, const Tensor64& upstream) {
  require(x.size() == upstream.size(), "relu_backward: shape mismatch");
  Tensor64 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return out;
}

Tensor64 softmax(const Tensor64& logits) {
  require(!logits.empty(), "softmax: empty input");
  const auto data = logits.data();
  const double max = *std::max_element(data.begin(), data.end());
  Tensor64 out(logits.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out[i] = std::exp(data[i] - max);
    sum += out[i];
  }
  for (std::size_t i = 0; i < data.size(); ++i) out[i] /= sum;
  return out;
}

Tensor64 global_avg_pool(const Tensor64& x) {
  require(x.rank() == 2 && x.dim(1) > 0, "global_avg_pool: input must be [C, L] with L > 0");
  Tensor64 out({x.dim(0)});
  as_vector(out) = as_matrix(x, x.dim(0), x.dim(1)).rowwise().mean();
  return out;
}

Tensor64 global_avg_pool_backward(const Tensor64& upstream, std::size_t length) {
  require(length > 0, "global_avg_pool_backward: zero length");
  Tensor64 out({upstream.size(), length});
  const double scale = 1.0 / static_cast<double>(length);
  for (std::size_t c = 0; c < upstream.size(); ++c) {
    std::fill_n(out.ptr() + c * length, length, upstream[c] * scale);
  }
  return out;
}

DropoutResult dropout_forward(const Tensor64& x, double rate, Mode mode, SplitMix64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate " + std::to_string(rate) + " outside [0, 1)");
  }
  if (mode == Mode::eval) {
    return {x, Tensor64{}};
  }
  DropoutResult result{Tensor64(x.shape()), Tensor64(x.shape())};
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = rng.uniform01() < rate ? 0.0 : keep_scale;
    result.mask[i] = m;
    result.output[i] = x[i] * m;
  }
  return result;
}

Tensor64 dropout_backward(const Tensor64& mask, const Tensor64& upstream) {
  if (mask.empty()) return upstream;
  require(mask.size() == upstream.size(), "dropout_backward: shape mismatch");
  Tensor64 out(upstream.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = upstream[i] * mask[i];
  return out;
}

LstmOutput lstm_forward(const Tensor64& input, const LstmWeights& weights, const Tensor64& h0,
                        const Tensor64& c0, LstmCache* cache) {
  require(weights.recurrent_weights.rank() == 2 && weights.input_weights.rank() == 2,
          "lstm: weights must be rank 2");
  const std::size_t hidden = weights.hidden();
  const std::size_t gates = 4 * hidden;
  const std::size_t features = weights.input_size();
  require(weights.recurrent_weights.dim(0) == gates && weights.input_weights.dim(0) == gates,
          "lstm: gate rows must be 4H");
  require(weights.bias.size() == gates, "lstm: bias length must be 4H");
  require(input.rank() == 2 && input.dim(1) == features,
          "lstm: input must be [L, " + std::to_string(features) + "], got " + shape_string(input.shape()));
  require(h0.size() == hidden && c0.size() == hidden, "lstm: initial state must have H elements");
  const std::size_t steps = input.dim(0);

  Tensor64 pre({steps, gates});
  if (steps > 0) {
    auto pre_m = as_matrix(pre, steps, gates);
    pre_m.noalias() = as_matrix(input, steps, features) *
                      as_matrix(weights.input_weights, gates, features).transpose();
    pre_m.rowwise() += as_vector(weights.bias).transpose();
  }

  Tensor64 act({steps, gates});
  Tensor64 cells({steps + 1, hidden});
  Tensor64 hiddens({steps + 1, hidden});
  Tensor64 cell_tanh({steps, hidden});
  std::copy_n(c0.ptr(), hidden, cells.ptr());
  std::copy_n(h0.ptr(), hidden, hiddens.ptr());
  const auto wh = as_matrix(weights.recurrent_weights, gates, hidden);
  Eigen::VectorXd z(static_cast<Eigen::Index>(gates));

  for (std::size_t t = 0; t < steps; ++t) {
    const ConstVectorMap h_prev(hiddens.ptr() + t * hidden, static_cast<Eigen::Index>(hidden));
    z.noalias() = wh * h_prev;
    z += ConstVectorMap(pre.ptr() + t * gates, static_cast<Eigen::Index>(gates));
    double* a = act.ptr() + t * gates;
    for (std::size_t u = 0; u < hidden; ++u) {
      a[u] = sigmoid(z[static_cast<Eigen::Index>(u)]);
      a[hidden + u] = sigmoid(z[static_cast<Eigen::Index>(hidden + u)]);
      a[2 * hidden + u] = std::tanh(z[static_cast<Eigen::Index>(2 * hidden + u)]);
      a[3 * hidden + u] = sigmoid(z[static_cast<Eigen::Index>(3 * hidden + u)]);
    }
    const double* c_prev = cells.ptr() + t * hidden;
    double* c = cells.ptr() + (t + 1) * hidden;
    double* h = hiddens.ptr() + (t + 1) * hidden;
    double* tc = cell_tanh.ptr() + t * hidden;
    for (std::size_t u = 0; u < hidden; ++u) {
      c[u] = a[hidden + u] * c_prev[u] + a[u] * a[2 * hidden + u];
      tc[u] = std::tanh(c[u]);
      h[u] = a[3 * hidden + u] * tc[u];
    }
  }

  LstmOutput out;
  out.h_seq = Tensor64({steps, hidden},
                       std::vector<double>(hiddens.ptr() + hidden, hiddens.ptr() + (steps + 1) * hidden));
  out.h_last = Tensor64({hidden}, std::vector<double>(hiddens.ptr() + steps * hidden,
                                                      hiddens.ptr() + (steps + 1) * hidden));
  out.c_last = Tensor64({hidden}, std::vector<double>(cells.ptr() + steps * hidden,
                                                      cells.ptr() + (steps + 1) * hidden));
  check_finite(out.h_seq, "lstm_forward");
  if (cache != nullptr) {
    cache->input = input;
    cache->gates = std::move(act);
    cache->cells = std::move(cells);
    cache->hiddens = std::move(hiddens);
    cache->cell_tanh = std::move(cell_tanh);
    cache->valid = true;
  }
  return out;
}

LstmGrads lstm_backward(const LstmCache& cache, const LstmWeights& weights, const Tensor64& grad_h_seq,
                        const Tensor64& grad_h_last, const Tensor64& grad_c_last) {
  if (!cache.valid) {
    throw std::logic_error("lstm_backward: missing forward cache");
  }
  const std::size_t hidden = weights.hidden();
  const std::size_t gates = 4 * hidden;
  const std::size_t features = weights.input_size();
  const std::size_t steps = cache.input.dim(0);
  require(cache.gates.size() == steps * gates, "lstm_backward: cache does not match weights");
  require(grad_h_seq.empty() || grad_h_seq.size() == steps * hidden,
          "lstm_backward: grad_h_seq shape mismatch");
  require(grad_h_last.empty() || grad_h_last.size() == hidden, "lstm_backward: grad_h_last length");
  require(grad_c_last.empty() || grad_c_last.size() == hidden, "lstm_backward: grad_c_last length");

  Eigen::VectorXd dh = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
  Eigen::VectorXd dc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
  if (!grad_h_last.empty()) dh = as_vector(grad_h_last);
  if (!grad_c_last.empty()) dc = as_vector(grad_c_last);

  Tensor64 dz_all({steps, gates});
  const auto wh = as_matrix(weights.recurrent_weights, gates, hidden);

  for (std::size_t t = steps; t-- > 0;) {
    if (!grad_h_seq.empty()) {
      dh += ConstVectorMap(grad_h_seq.ptr() + t * hidden, static_cast<Eigen::Index>(hidden));
    }
    const double* a = cache.gates.ptr() + t * gates;
    const double* c_prev = cache.cells.ptr() + t * hidden;
    const double* tc = cache.cell_tanh.ptr() + t * hidden;
    double* dz = dz_all.ptr() + t * gates;
    for (std::size_t u = 0; u < hidden; ++u) {
      const auto e = static_cast<Eigen::Index>(u);
      const double i = a[u];
      const double f = a[hidden + u];
      const double g = a[2 * hidden + u];
      const double o = a[3 * hidden + u];
      const double d_o = dh[e] * tc[u];
      const double d_c = dc[e] + dh[e] * o * (1.0 - tc[u] * tc[u]);
      dz[u] = d_c * g * i * (1.0 - i);
      dz[hidden + u] = d_c * c_prev[u] * f * (1.0 - f);
      dz[2 * hidden + u] = d_c * i * (1.0 - g * g);
      dz[3 * hidden + u] = d_o * o * (1.0 - o);
      dc[e] = d_c * f;
    }
    dh.noalias() = wh.transpose() * ConstVectorMap(dz, static_cast<Eigen::Index>(gates));
  }

  LstmGrads grads{Tensor64({steps, features}),
                  Tensor64(weights.input_weights.shape()),
                  Tensor64(weights.recurrent_weights.shape()),
                  Tensor64({gates}),
                  Tensor64({hidden}),
                  Tensor64({hidden})};
  if (steps > 0) {
    const auto dz_m = as_matrix(dz_all, steps, gates);
    as_matrix(grads.input_weights, gates, features).noalias() =
        dz_m.transpose() * as_matrix(cache.input, steps, features);
    as_matrix(grads.recurrent_weights, gates, hidden).noalias() =
        dz_m.transpose() * as_matrix(cache.hiddens, steps + 1, hidden).topRows(static_cast<Eigen::Index>(steps));
    as_vector(grads.bias) = dz_m.colwise().sum().transpose();
    as_matrix(grads.input, steps, features).noalias() =
        dz_m * as_matrix(weights.input_weights, gates, features);
  }
  as_vector(grads.h0) = dh;
  as_vector(grads.c0) = dc;
  return grads;
}

}  // namespace avr::nn
