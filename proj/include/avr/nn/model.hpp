#pragma once

// The two fusion classifiers. Each modality (audio, video) runs through its
// own branch, branch outputs are concatenated, and a shared head maps the
// fused vector to two logits ordered [non_humor, humor].
//
//   cnn:  [1, 768] -> conv(32, k3) -> relu -> conv(64, k3) -> relu -> pool
//   lstm: [steps, 768 / steps] -> LSTM(H) -> h_last
//   head: concat -> dense(128) -> relu -> dropout -> dense(2)
//
// Parameter names (cnn):   {audio,video}.conv{1,2}.{weight,bias}
//                 (lstm):  {audio,video}.lstm.{input_weights,recurrent_weights,bias}
//                 (head):  head.fc1.{weight,bias}, head.fc2.{weight,bias}

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avr/nn/layers.hpp"
#include "avr/nn/tensor.hpp"
#include "json.hpp"

namespace avr::nn {

enum class Arch { cnn, lstm };
/// How a conv branch's [C, L] output becomes a vector.
enum class BranchPooling { global_average, flatten };

std::string_view to_string(Arch arch);
std::string_view to_string(BranchPooling pooling);
Arch parse_arch(std::string_view text);
BranchPooling parse_pooling(std::string_view text);

struct ModelSpec {
  Arch arch = Arch::cnn;
  std::size_t input_dim = 768;
  std::vector<std::size_t> conv_filters{32, 64};
  std::size_t kernel_size = 3;
  BranchPooling pooling = BranchPooling::global_average;
  std::size_t lstm_hidden = 50;
  /// LSTM sequence length; each step sees input_dim / lstm_steps features.
  std::size_t lstm_steps = 768;
  std::size_t head_hidden = 128;
  std::size_t num_classes = 2;
  double dropout_rate = 0.2;

  /// Throws std::invalid_argument on an inconsistent spec.
  void validate() const;
  std::size_t branch_output_dim() const;
  std::size_t lstm_features() const { return input_dim / lstm_steps; }

  bool operator==(const ModelSpec&) const = default;
};

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& doc);

enum class ParamKind { conv_weight, conv_bias, lstm_input, lstm_recurrent, lstm_bias, dense_weight, dense_bias };

struct ParamInfo {
  std::string name;
  Shape shape;
  ParamKind kind;
  std::size_t fan_in;
};

/// Every learnable tensor of `spec`, in a fixed order.
std::vector<ParamInfo> parameter_layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

template <class T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

struct ModelParams {
  ParamMap<float> tensors;
  std::uint64_t seed = 0;

  ParamMap<double> widen() const;
  std::size_t count() const;
  bool operator==(const ModelParams&) const = default;
};

/// Rounds each tensor to binary32.
ParamMap<float> narrow(const ParamMap<double>& params);

/// Kaiming-uniform (bound sqrt(6 / fan_in)) for conv and dense weights,
/// uniform(-1/sqrt(H), 1/sqrt(H)) for LSTM matrices, zero biases except the
/// LSTM forget gate (1.0). Each tensor draws from its own stream keyed by
/// (seed, name), so the result does not depend on iteration order.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

struct BranchCache {
  std::vector<Tensor64> conv_inputs;
  std::vector<Tensor64> conv_pre;
  std::size_t final_length = 0;
  LstmCache lstm;
};

struct ForwardCache {
  BranchCache audio;
  BranchCache video;
  Tensor64 fused;
  Tensor64 hidden_pre;
  Tensor64 dropout_mask;
  Tensor64 dropped;
  bool valid = false;
};

/// Returns logits [2]. `rng` drives dropout and must be non-null in train
/// mode. Fills `cache` for model_backward when given.
Tensor64 model_forward(const ModelSpec& spec, const ParamMap<double>& params, std::span<const float> audio,
                       std::span<const float> video, Mode mode, SplitMix64* rng = nullptr,
                       ForwardCache* cache = nullptr);

Tensor64 model_forward(const ModelSpec& spec, const ModelParams& params, std::span<const float> audio,
                       std::span<const float> video, Mode mode, SplitMix64* rng = nullptr,
                       ForwardCache* cache = nullptr);

/// Gradients of every parameter given dLoss/dlogits. Throws
/// std::logic_error when the cache was not filled by model_forward.
ParamMap<double> model_backward(const ModelSpec& spec, const ParamMap<double>& params,
                                const ForwardCache& cache, const Tensor64& grad_logits);

/// Index of the larger probability; ties go to non_humor (0).
int argmax_label(std::span<const double> probabilities);

/// An immutable eval-mode model, safe to share across threads.
class Classifier {
 public:
  Classifier(ModelSpec spec, ModelParams params);

  const ModelSpec& spec() const noexcept { return spec_; }
  const ModelParams& params() const noexcept { return params_; }

  Tensor64 logits(std::span<const float> audio, std::span<const float> video) const;
  /// [non_humor, humor]
  std::array<double, 2> probabilities(std::span<const float> audio, std::span<const float> video) const;

 private:
  ModelSpec spec_;
  ModelParams params_;
  ParamMap<double> wide_;
};

}  // namespace avr::nn
