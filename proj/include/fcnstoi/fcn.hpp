#pragma once

// Fully convolutional waveform-to-waveform network with hand-written forward
// and reverse passes. Signals are channel x time matrices; every convolution
// uses same padding, so any utterance length maps to the same length.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fcnstoi/matrix.hpp"
#include "fcnstoi/waveform.hpp"

namespace fcnstoi::fcn {

enum class Activation : std::uint8_t { kLinear = 0, kLeakyRelu = 1, kTanh = 2 };

inline constexpr double kDefaultSlope = 0.3;
inline constexpr double kNormEpsilon = 1e-10;

struct ConvLayer {
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t kernel_len = 1;
  std::vector<double> kernels;  // out_ch x in_ch x kernel_len, row-major
  std::vector<double> bias;     // out_ch
  Activation activation = Activation::kLinear;
  double slope = kDefaultSlope;

  double& weight(std::size_t o, std::size_t i, std::size_t k) {
    return kernels[(o * in_ch + i) * kernel_len + k];
  }
  double weight(std::size_t o, std::size_t i, std::size_t k) const {
    return kernels[(o * in_ch + i) * kernel_len + k];
  }
  bool operator==(const ConvLayer&) const = default;
};

// out_ch x in_ch x kernel_len zero-initialized layer. The slope is stored at
// f32 precision, as in checkpoints.
ConvLayer make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel_len,
                    Activation activation, double slope = kDefaultSlope);

struct NormLayer {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.99;

  std::size_t channels() const noexcept { return gamma.size(); }
  bool operator==(const NormLayer&) const = default;
};

// Momentum is stored at f32 precision.
NormLayer make_norm(std::size_t channels, double momentum = 0.99);

struct Layer {
  ConvLayer conv;
  std::optional<NormLayer> norm;  // applied between the convolution and the activation
  bool operator==(const Layer&) const = default;
};

struct ModelConfig {
  std::size_t hidden_layers = 7;  // K
  std::size_t filters = 30;       // F
  std::size_t kernel_len = 55;
  bool with_norm = true;
  double slope = kDefaultSlope;
};

struct FcnModel {
  std::vector<Layer> layers;

  // Checks channel chaining (1 -> F -> ... -> F -> 1), odd kernels and tensor
  // sizes; throws kInvalidArgument.
  void validate() const;
  ModelConfig config() const;
  // Number of learnable scalars actually allocated.
  std::size_t learnable_count() const;
  // Hash of every stored value (learnable and running statistics).
  std::uint64_t fingerprint() const;

  bool operator==(const FcnModel&) const = default;
};

// Closed-form count: sum of (out * in * len + out) over layers plus
// 2 * F * K normalization parameters.
std::size_t parameter_count(const ModelConfig& config);

// Fan-in scaled uniform kernels, zero biases, unit gains; deterministic in seed.
FcnModel init_model(const ModelConfig& config, std::uint64_t seed);

// Cross-correlation with (kernel_len - 1) / 2 zeros on each side plus bias.
Matrix conv1d_same(const Matrix& input, const ConvLayer& layer);

double activate(double x, Activation kind, double slope);
std::vector<double> activation(std::span<const double> x, Activation kind, double slope);

enum class Mode { kTrain, kInfer };

struct NormStats {
  std::vector<double> mean;
  std::vector<double> var;
};

// Pure normalization: train mode uses the statistics of `x` over time (and
// reports them through `stats`), infer mode uses the running statistics.
Matrix normalize(const Matrix& x, const NormLayer& layer, Mode mode, NormStats* stats = nullptr);
void update_running_stats(NormLayer& layer, const NormStats& stats);
// normalize() followed by update_running_stats() in train mode.
Matrix norm_forward(const Matrix& x, NormLayer& layer, Mode mode);

struct LayerTape {
  Matrix input;
  Matrix normalized;            // x-hat, only for layers with normalization
  std::vector<double> inv_std;  // 1 / sqrt(var + eps) per channel
  NormStats stats;
};

struct ForwardTape {
  std::uint64_t model_fingerprint = 0;
  std::size_t length = 0;
  std::vector<LayerTape> layers;
  std::vector<double> output;

  bool empty() const noexcept { return layers.empty(); }
};

struct ForwardResult {
  Waveform enhanced;
  ForwardTape tape;  // empty in infer mode
};

ForwardResult fcn_forward(const FcnModel& model, const Waveform& noisy, Mode mode);

// Folds the batch statistics recorded by a train-mode forward into the
// running statistics.
void commit_running_stats(FcnModel& model, const ForwardTape& tape);

struct LayerGrad {
  std::vector<double> kernels;
  std::vector<double> bias;
  std::vector<double> gamma;  // empty without normalization
  std::vector<double> beta;
};

struct Gradients {
  std::vector<LayerGrad> layers;
  std::vector<double> input_cotangent;

  // Zero gradients shaped like model.
  static Gradients zeros_like(const FcnModel& model);
  void add_scaled(const Gradients& other, double scale);
  void scale(double factor);
  std::vector<double> flatten() const;
};

Gradients fcn_backward(const FcnModel& model, const ForwardTape& tape,
                       std::span<const double> output_cotangent);

// Learnable parameters in a fixed order (per layer: kernels, bias, gamma,
// beta); matches Gradients::flatten().
std::vector<double> flatten_parameters(const FcnModel& model);
void assign_parameters(FcnModel& model, std::span<const double> values);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update on a flat parameter vector. A non-finite
// gradient aborts before anything is modified.
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 double lr);
void adam_step(FcnModel& model, const Gradients& grads, AdamState& state, double lr);

struct FrequencyResponse {
  Matrix magnitude;  // filters x (nfft/2 + 1)
  std::vector<double> freqs_hz;
  double high_band_ratio = 0.0;  // share of |H|^2 above the split frequency
};

FrequencyResponse first_layer_frequency_response(const FcnModel& model, std::size_t nfft,
                                                 double sample_rate, double split_hz = 4000.0);

std::vector<std::uint8_t> serialize_checkpoint(const FcnModel& model);
FcnModel parse_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const FcnModel& model, const std::filesystem::path& path);
FcnModel load_checkpoint(const std::filesystem::path& path);

}  // namespace fcnstoi::fcn
