#include "avr/nn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "avr/random.hpp"

namespace avr::nn {
namespace {

const BasicTensor<double>& param(const ParamMap<double>& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) {
    throw std::invalid_argument("missing parameter " + name);
  }
  return it->second;
}

Tensor64 widen_input(std::span<const float> values, std::size_t expected, const char* modality) {
  if (values.size() != expected) {
    throw std::invalid_argument(std::string(modality) + " embedding dim " + std::to_string(values.size()) +
                                " != " + std::to_string(expected));
  }
  return Tensor64({values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor64 branch_forward(const ModelSpec& spec, const ParamMap<double>& params, const std::string& prefix,
                        const Tensor64& embedding, BranchCache* cache) {
  if (spec.arch == Arch::cnn) {
    Tensor64 x = embedding.reshaped({1, spec.input_dim});
    for (std::size_t layer = 0; layer < spec.conv_filters.size(); ++layer) {
      const std::string base = prefix + ".conv" + std::to_string(layer + 1);
      Tensor64 pre = conv1d_forward(x, param(params, base + ".weight"), param(params, base + ".bias"));
      Tensor64 act = relu_forward(pre);
      if (cache != nullptr) {
        cache->conv_inputs.push_back(std::move(x));
        cache->conv_pre.push_back(std::move(pre));
      }
      x = std::move(act);
    }
    if (cache != nullptr) cache->final_length = x.dim(1);
    if (spec.pooling == BranchPooling::global_average) {
      return global_avg_pool(x);
    }
    return x.reshaped({x.size()});
  }
  const Tensor64 sequence = embedding.reshaped({spec.lstm_steps, spec.lstm_features()});
  const LstmWeights weights{param(params, prefix + ".lstm.input_weights"),
                            param(params, prefix + ".lstm.recurrent_weights"),
                            param(params, prefix + ".lstm.bias")};
  const Tensor64 zeros({spec.lstm_hidden});
  LstmOutput out = lstm_forward(sequence, weights, zeros, zeros, cache != nullptr ? &cache->lstm : nullptr);
  return std::move(out.h_last);
}

void branch_backward(const ModelSpec& spec, const ParamMap<double>& params, const std::string& prefix,
                     const BranchCache& cache, const Tensor64& upstream, ParamMap<double>& grads) {
  if (spec.arch == Arch::cnn) {
    const std::size_t channels = spec.conv_filters.back();
    Tensor64 grad = spec.pooling == BranchPooling::global_average
                        ? global_avg_pool_backward(upstream, cache.final_length)
                        : upstream.reshaped({channels, cache.final_length});
    for (std::size_t layer = spec.conv_filters.size(); layer-- > 0;) {
      const std::string base = prefix + ".conv" + std::to_string(layer + 1);
      const Tensor64 grad_pre = relu_backward(cache.conv_pre[layer], grad);
      Conv1dGrads g = conv1d_backward(cache.conv_inputs[layer], param(params, base + ".weight"), grad_pre);
      grads[base + ".weight"] = std::move(g.kernels);
      grads[base + ".bias"] = std::move(g.bias);
      grad = std::move(g.input);
    }
    return;
  }
  const LstmWeights weights{param(params, prefix + ".lstm.input_weights"),
                            param(params, prefix + ".lstm.recurrent_weights"),
                            param(params, prefix + ".lstm.bias")};
  LstmGrads g = lstm_backward(cache.lstm, weights, Tensor64{}, upstream, Tensor64{});
  grads[prefix + ".lstm.input_weights"] = std::move(g.input_weights);
  grads[prefix + ".lstm.recurrent_weights"] = std::move(g.recurrent_weights);
  grads[prefix + ".lstm.bias"] = std::move(g.bias);
}

}  // namespace

std::string_view to_string(Arch arch) { return arch == Arch::cnn ? "cnn" : "lstm"; }

std::string_view to_string(BranchPooling pooling) {
  return pooling == BranchPooling::global_average ? "global_average" : "flatten";
}

Arch parse_arch(std::string_view text) {
  if (text == "cnn") return Arch::cnn;
  if (text == "lstm") return Arch::lstm;
  throw std::invalid_argument("unknown arch '" + std::string(text) + "' (expected cnn or lstm)");
}

BranchPooling parse_pooling(std::string_view text) {
  if (text == "global_average") return BranchPooling::global_average;
  if (text == "flatten") return BranchPooling::flatten;
  throw std::invalid_argument("unknown pooling '" + std::string(text) + "'");
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model spec: " + msg); };
  if (input_dim == 0) fail("input_dim must be positive");
  if (num_classes != 2) fail("num_classes must be 2");
  if (head_hidden == 0) fail("head_hidden must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
  if (arch == Arch::cnn) {
    if (conv_filters.empty()) fail("conv_filters must not be empty");
    for (auto f : conv_filters) {
      if (f == 0) fail("conv filter counts must be positive");
    }
    if (kernel_size == 0) fail("kernel_size must be positive");
    if (input_dim < conv_filters.size() * (kernel_size - 1) + 1) fail("input_dim too short for conv stack");
  } else {
    if (lstm_hidden == 0) fail("lstm_hidden must be positive");
    if (lstm_steps == 0 || input_dim % lstm_steps != 0) {
      fail("lstm_steps " + std::to_string(lstm_steps) + " must divide input_dim " + std::to_string(input_dim));
    }
  }
}

std::size_t ModelSpec::branch_output_dim() const {
  if (arch == Arch::lstm) return lstm_hidden;
  if (pooling == BranchPooling::global_average) return conv_filters.back();
  const std::size_t length = input_dim - conv_filters.size() * (kernel_size - 1);
  return conv_filters.back() * length;
}

nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"arch", to_string(spec.arch)},
          {"input_dim", spec.input_dim},
          {"conv_filters", spec.conv_filters},
          {"kernel_size", spec.kernel_size},
          {"pooling", to_string(spec.pooling)},
          {"lstm_hidden", spec.lstm_hidden},
          {"lstm_steps", spec.lstm_steps},
          {"head_hidden", spec.head_hidden},
          {"num_classes", spec.num_classes},
          {"dropout_rate", spec.dropout_rate}};
}

ModelSpec spec_from_json(const nlohmann::json& doc) {
  ModelSpec spec;
  spec.arch = parse_arch(doc.at("arch").get<std::string>());
  spec.input_dim = doc.value("input_dim", spec.input_dim);
  spec.conv_filters = doc.value("conv_filters", spec.conv_filters);
  spec.kernel_size = doc.value("kernel_size", spec.kernel_size);
  spec.pooling = parse_pooling(doc.value("pooling", std::string(to_string(spec.pooling))));
  spec.lstm_hidden = doc.value("lstm_hidden", spec.lstm_hidden);
  spec.lstm_steps = doc.value("lstm_steps", spec.lstm_steps);
  spec.head_hidden = doc.value("head_hidden", spec.head_hidden);
  spec.num_classes = doc.value("num_classes", spec.num_classes);
  spec.dropout_rate = doc.value("dropout_rate", spec.dropout_rate);
  spec.validate();
  return spec;
}

std::vector<ParamInfo> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamInfo> layout;
  for (const char* modality : {"audio", "video"}) {
    const std::string prefix(modality);
    if (spec.arch == Arch::cnn) {
      std::size_t in_channels = 1;
      for (std::size_t layer = 0; layer < spec.conv_filters.size(); ++layer) {
        const std::string base = prefix + ".conv" + std::to_string(layer + 1);
        const std::size_t out_channels = spec.conv_filters[layer];
        const std::size_t fan_in = in_channels * spec.kernel_size;
        layout.push_back({base + ".weight", {out_channels, in_channels, spec.kernel_size}, ParamKind::conv_weight, fan_in});
        layout.push_back({base + ".bias", {out_channels}, ParamKind::conv_bias, fan_in});
        in_channels = out_channels;
      }
    } else {
      const std::size_t h = spec.lstm_hidden;
      layout.push_back({prefix + ".lstm.input_weights", {4 * h, spec.lstm_features()}, ParamKind::lstm_input, h});
      layout.push_back({prefix + ".lstm.recurrent_weights", {4 * h, h}, ParamKind::lstm_recurrent, h});
      layout.push_back({prefix + ".lstm.bias", {4 * h}, ParamKind::lstm_bias, h});
    }
  }
  const std::size_t fused = 2 * spec.branch_output_dim();
  layout.push_back({"head.fc1.weight", {spec.head_hidden, fused}, ParamKind::dense_weight, fused});
  layout.push_back({"head.fc1.bias", {spec.head_hidden}, ParamKind::dense_bias, fused});
  layout.push_back({"head.fc2.weight", {spec.num_classes, spec.head_hidden}, ParamKind::dense_weight, spec.head_hidden});
  layout.push_back({"head.fc2.bias", {spec.num_classes}, ParamKind::dense_bias, spec.head_hidden});
  return layout;
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& info : parameter_layout(spec)) total += shape_size(info.shape);
  return total;
}

ParamMap<double> ModelParams::widen() const {
  ParamMap<double> out;
  for (const auto& [name, t] : tensors) out.emplace(name, t.cast<double>());
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : tensors) total += t.size();
  return total;
}

ParamMap<float> narrow(const ParamMap<double>& params) {
  ParamMap<float> out;
  for (const auto& [name, t] : params) out.emplace(name, t.cast<float>());
  return out;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams params;
  params.seed = seed;
  for (const auto& info : parameter_layout(spec)) {
    Tensor t(info.shape);
    SplitMix64 rng(derive_seed(seed, {fnv1a64(info.name)}));
    switch (info.kind) {
      case ParamKind::conv_weight:
      case ParamKind::dense_weight: {
        const double bound = std::sqrt(6.0 / static_cast<double>(info.fan_in));
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::lstm_input:
      case ParamKind::lstm_recurrent: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.lstm_hidden));
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::lstm_bias:
        for (std::size_t u = spec.lstm_hidden; u < 2 * spec.lstm_hidden; ++u) t[u] = 1.0f;
        break;
      case ParamKind::conv_bias:
      case ParamKind::dense_bias:
        break;
    }
    params.tensors.emplace(info.name, std::move(t));
  }
  return params;
}

Tensor64 model_forward(const ModelSpec& spec, const ParamMap<double>& params, std::span<const float> audio,
                       std::span<const float> video, Mode mode, SplitMix64* rng, ForwardCache* cache) {
  const Tensor64 audio_in = widen_input(audio, spec.input_dim, "audio");
  const Tensor64 video_in = widen_input(video, spec.input_dim, "video");
  if (cache != nullptr) *cache = ForwardCache{};

  const Tensor64 audio_out = branch_forward(spec, params, "audio", audio_in, cache ? &cache->audio : nullptr);
  const Tensor64 video_out = branch_forward(spec, params, "video", video_in, cache ? &cache->video : nullptr);

  Tensor64 fused({audio_out.size() + video_out.size()});
  std::copy(audio_out.data().begin(), audio_out.data().end(), fused.ptr());
  std::copy(video_out.data().begin(), video_out.data().end(), fused.ptr() + audio_out.size());

  Tensor64 hidden_pre = dense_forward(fused, param(params, "head.fc1.weight"), param(params, "head.fc1.bias"));
  const Tensor64 hidden = relu_forward(hidden_pre);
  DropoutResult dropped;
  if (mode == Mode::train && spec.dropout_rate > 0.0) {
    if (rng == nullptr) throw std::invalid_argument("model_forward: train mode needs an rng for dropout");
    dropped = dropout_forward(hidden, spec.dropout_rate, mode, *rng);
  } else {
    dropped.output = hidden;
  }
  Tensor64 logits = dense_forward(dropped.output, param(params, "head.fc2.weight"), param(params, "head.fc2.bias"));
  check_finite(logits, "model_forward");

  if (cache != nullptr) {
    cache->fused = std::move(fused);
    cache->hidden_pre = std::move(hidden_pre);
    cache->dropout_mask = std::move(dropped.mask);
    cache->dropped = std::move(dropped.output);
    cache->valid = true;
  }
  return logits;
}

Tensor64 model_forward(const ModelSpec& spec, const ModelParams& params, std::span<const float> audio,
                       std::span<const float> video, Mode mode, SplitMix64* rng, ForwardCache* cache) {
  return model_forward(spec, params.widen(), audio, video, mode, rng, cache);
}

ParamMap<double> model_backward(const ModelSpec& spec, const ParamMap<double>& params, const ForwardCache& cache,
                                const Tensor64& grad_logits) {
  if (!cache.valid) {
    throw std::logic_error("model_backward: missing forward cache");
  }
  if (grad_logits.size() != spec.num_classes) {
    throw std::invalid_argument("model_backward: grad_logits must have " + std::to_string(spec.num_classes) +
                                " elements");
  }
  ParamMap<double> grads;
  DenseGrads out_grads = dense_backward(cache.dropped, param(params, "head.fc2.weight"), grad_logits);
  grads["head.fc2.weight"] = std::move(out_grads.weight);
  grads["head.fc2.bias"] = std::move(out_grads.bias);

  const Tensor64 grad_hidden = dropout_backward(cache.dropout_mask, out_grads.input);
  const Tensor64 grad_pre = relu_backward(cache.hidden_pre, grad_hidden);
  DenseGrads hidden_grads = dense_backward(cache.fused, param(params, "head.fc1.weight"), grad_pre);
  grads["head.fc1.weight"] = std::move(hidden_grads.weight);
  grads["head.fc1.bias"] = std::move(hidden_grads.bias);

  const std::size_t branch = spec.branch_output_dim();
  const auto& fused_grad = hidden_grads.input.storage();
  const Tensor64 audio_grad({branch}, std::vector<double>(fused_grad.begin(), fused_grad.begin() + static_cast<std::ptrdiff_t>(branch)));
  const Tensor64 video_grad({branch}, std::vector<double>(fused_grad.begin() + static_cast<std::ptrdiff_t>(branch), fused_grad.end()));
  branch_backward(spec, params, "audio", cache.audio, audio_grad, grads);
  branch_backward(spec, params, "video", cache.video, video_grad, grads);
  return grads;
}

int argmax_label(std::span<const double> probabilities) {
  if (probabilities.size() != 2) {
    throw std::invalid_argument("argmax_label: expected 2 probabilities");
  }
  return probabilities[1] > probabilities[0] ? 1 : 0;
}

Classifier::Classifier(ModelSpec spec, ModelParams params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  for (const auto& info : parameter_layout(spec_)) {
    const auto it = params_.tensors.find(info.name);
    if (it == params_.tensors.end()) {
      throw std::invalid_argument("model parameters lack " + info.name);
    }
    if (it->second.shape() != info.shape) {
      throw std::invalid_argument("parameter " + info.name + " has shape " + shape_string(it->second.shape()) +
                                  ", expected " + shape_string(info.shape));
    }
  }
  wide_ = params_.widen();
}

Tensor64 Classifier::logits(std::span<const float> audio, std::span<const float> video) const {
  return model_forward(spec_, wide_, audio, video, Mode::eval);
}

std::array<double, 2> Classifier::probabilities(std::span<const float> audio, std::span<const float> video) const {
  const Tensor64 probs = softmax(logits(audio, video));
  return {probs[0], probs[1]};
}

}  // namespace avr::nn
