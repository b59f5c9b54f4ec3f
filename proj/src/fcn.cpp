#include "fcnstoi/fcn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <string>

#include "fcnstoi/dsp.hpp"
#include "fcnstoi/error.hpp"

namespace fcnstoi::fcn {
namespace {

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 1099511628211ULL;
    }
  }
  void values(const std::vector<double>& v) {
    const std::size_t n = v.size();
    bytes(&n, sizeof n);
    bytes(v.data(), n * sizeof(double));
  }
  template <typename T>
  void scalar(T v) { bytes(&v, sizeof v); }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 14695981039346656037ULL;
};

// Visits (parameter, gradient) vector pairs in flatten order.
template <typename Model, typename Grads, typename Visit>
void for_each_param(Model& model, Grads& grads, Visit&& visit) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    auto& g = grads.layers[l];
    visit(layer.conv.kernels, g.kernels);
    visit(layer.conv.bias, g.bias);
    if (layer.norm) {
      visit(layer.norm->gamma, g.gamma);
      visit(layer.norm->beta, g.beta);
    }
  }
}

void check_shapes(const FcnModel& model, const Gradients& grads) {
  bool ok = grads.layers.size() == model.layers.size();
  for (std::size_t l = 0; ok && l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const auto& g = grads.layers[l];
    ok = g.kernels.size() == layer.conv.kernels.size() && g.bias.size() == layer.conv.bias.size();
    if (ok && layer.norm) {
      ok = g.gamma.size() == layer.norm->gamma.size() && g.beta.size() == layer.norm->beta.size();
    }
  }
  if (!ok) throw Error(ErrorCode::kInvalidArgument, "gradient shapes do not match the model");
}

}  // namespace

ConvLayer make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel_len,
                    Activation activation, double slope) {
  ConvLayer c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel_len = kernel_len;
  c.kernels.assign(out_ch * in_ch * kernel_len, 0.0);
  c.bias.assign(out_ch, 0.0);
  c.activation = activation;
  c.slope = static_cast<float>(slope);
  return c;
}

NormLayer make_norm(std::size_t channels, double momentum) {
  NormLayer n;
  n.gamma.assign(channels, 1.0);
  n.beta.assign(channels, 0.0);
  n.running_mean.assign(channels, 0.0);
  n.running_var.assign(channels, 1.0);
  n.momentum = static_cast<float>(momentum);
  return n;
}

void FcnModel::validate() const {
  auto fail = [](std::size_t l, const std::string& why) {
    throw Error(ErrorCode::kInvalidArgument, "layer " + std::to_string(l) + ": " + why);
  };
  if (layers.empty()) throw Error(ErrorCode::kInvalidArgument, "model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& c = layers[l].conv;
    if (c.kernel_len % 2 == 0) fail(l, "kernel length must be odd");
    if (c.kernels.size() != c.out_ch * c.in_ch * c.kernel_len || c.bias.size() != c.out_ch) {
      fail(l, "tensor sizes do not match the declared shape");
    }
    if (l == 0 && c.in_ch != 1) fail(l, "first layer must take one input channel");
    if (l > 0 && c.in_ch != layers[l - 1].conv.out_ch) fail(l, "channel chaining broken");
    if (l + 1 == layers.size() && c.out_ch != 1) fail(l, "last layer must emit one channel");
    if (c.activation == Activation::kLeakyRelu && !(c.slope > 0.0 && c.slope < 1.0)) {
      fail(l, "leaky slope must lie in (0, 1)");
    }
    if (const auto& n = layers[l].norm) {
      if (n->gamma.size() != c.out_ch || n->beta.size() != c.out_ch ||
          n->running_mean.size() != c.out_ch || n->running_var.size() != c.out_ch) {
        fail(l, "normalization size mismatch");
      }
    }
  }
}

ModelConfig FcnModel::config() const {
  ModelConfig cfg;
  cfg.hidden_layers = layers.empty() ? 0 : layers.size() - 1;
  cfg.filters = cfg.hidden_layers > 0 ? layers.front().conv.out_ch : 0;
  cfg.kernel_len = layers.empty() ? 0 : layers.front().conv.kernel_len;
  cfg.with_norm = cfg.hidden_layers > 0 && layers.front().norm.has_value();
  cfg.slope = layers.empty() ? kDefaultSlope : layers.front().conv.slope;
  return cfg;
}

std::size_t FcnModel::learnable_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    n += layer.conv.kernels.size() + layer.conv.bias.size();
    if (layer.norm) n += layer.norm->gamma.size() + layer.norm->beta.size();
  }
  return n;
}

std::uint64_t FcnModel::fingerprint() const {
  Fnv1a h;
  for (const auto& layer : layers) {
    h.scalar(layer.conv.in_ch);
    h.scalar(layer.conv.out_ch);
    h.scalar(layer.conv.kernel_len);
    h.scalar(static_cast<std::uint8_t>(layer.conv.activation));
    h.scalar(layer.conv.slope);
    h.values(layer.conv.kernels);
    h.values(layer.conv.bias);
    h.scalar(layer.norm.has_value());
    if (layer.norm) {
      h.values(layer.norm->gamma);
      h.values(layer.norm->beta);
      h.values(layer.norm->running_mean);
      h.values(layer.norm->running_var);
      h.scalar(layer.norm->momentum);
    }
  }
  return h.value();
}

std::size_t parameter_count(const ModelConfig& config) {
  const std::size_t k = config.hidden_layers;
  const std::size_t f = config.filters;
  const std::size_t len = config.kernel_len;
  std::size_t total = 0;
  std::size_t in_ch = 1;
  for (std::size_t l = 0; l < k; ++l) {
    total += f * in_ch * len + f;
    in_ch = f;
  }
  total += in_ch * len + 1;
  if (config.with_norm) total += 2 * f * k;
  return total;
}

FcnModel init_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.kernel_len % 2 == 0 || (config.hidden_layers > 0 && config.filters == 0)) {
    throw Error(ErrorCode::kInvalidArgument, "init_model: need odd kernel_len and filters >= 1");
  }
  std::mt19937_64 rng(seed);
  FcnModel model;
  std::size_t in_ch = 1;
  auto fill = [&](ConvLayer& c) {
    // Draw in float so checkpoints (f32) reproduce a fresh model exactly.
    const float bound = static_cast<float>(
        std::sqrt(6.0 / static_cast<double>(c.in_ch * c.kernel_len)));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (double& w : c.kernels) w = static_cast<double>(dist(rng));
  };
  for (std::size_t l = 0; l < config.hidden_layers; ++l) {
    Layer layer{make_conv(in_ch, config.filters, config.kernel_len, Activation::kLeakyRelu,
                          config.slope),
                std::nullopt};
    if (config.with_norm) layer.norm = make_norm(config.filters);
    fill(layer.conv);
    model.layers.push_back(std::move(layer));
    in_ch = config.filters;
  }
  Layer out{make_conv(in_ch, 1, config.kernel_len, Activation::kTanh, config.slope), std::nullopt};
  fill(out.conv);
  model.layers.push_back(std::move(out));
  return model;
}

Matrix conv1d_same(const Matrix& input, const ConvLayer& layer) {
  if (input.rows() != layer.in_ch) {
    throw Error(ErrorCode::kInvalidArgument,
                "conv1d_same: input has " + std::to_string(input.rows()) +
                    " channels, layer expects " + std::to_string(layer.in_ch));
  }
  if (layer.kernel_len % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument, "conv1d_same: kernel length must be odd");
  }
  const std::size_t len = input.cols();
  const long pad = static_cast<long>(layer.kernel_len / 2);
  const long n = static_cast<long>(len);
  Matrix out(layer.out_ch, len);
  for (std::size_t o = 0; o < layer.out_ch; ++o) {
    double* y = out.row(o).data();
    std::fill(y, y + len, layer.bias[o]);
    for (std::size_t i = 0; i < layer.in_ch; ++i) {
      const double* x = input.row(i).data();
      for (std::size_t k = 0; k < layer.kernel_len; ++k) {
        const double w = layer.weight(o, i, k);
        if (w == 0.0) continue;
        const long shift = static_cast<long>(k) - pad;
        const long t0 = std::max(0L, -shift);
        const long t1 = std::min(n, n - shift);
        for (long t = t0; t < t1; ++t) y[t] += w * x[t + shift];
      }
    }
  }
  return out;
}

double activate(double x, Activation kind, double slope) {
  switch (kind) {
    case Activation::kLeakyRelu: return x >= 0.0 ? x : slope * x;
    case Activation::kTanh: {
      // Nearest double below 1.
      constexpr double kBound = 1.0 - 0x1p-53;
      return std::clamp(std::tanh(x), -kBound, kBound);
    }
    case Activation::kLinear: return x;
  }
  return x;
}

std::vector<double> activation(std::span<const double> x, Activation kind, double slope) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = activate(x[i], kind, slope);
  return out;
}

Matrix normalize(const Matrix& x, const NormLayer& layer, Mode mode, NormStats* stats) {
  if (x.rows() != layer.channels()) {
    throw Error(ErrorCode::kInvalidArgument, "normalize: channel mismatch");
  }
  const std::size_t len = x.cols();
  if (mode == Mode::kTrain && len < 2) {
    throw Error(ErrorCode::kInvalidArgument, "normalize: train mode needs at least 2 samples");
  }
  Matrix out(x.rows(), len);
  if (stats) {
    stats->mean.assign(x.rows(), 0.0);
    stats->var.assign(x.rows(), 0.0);
  }
  for (std::size_t c = 0; c < x.rows(); ++c) {
    const auto row = x.row(c);
    double mu, var;
    if (mode == Mode::kTrain) {
      long double acc = 0.0L;
      for (double v : row) acc += v;
      mu = static_cast<double>(acc / static_cast<long double>(len));
      acc = 0.0L;
      for (double v : row) acc += static_cast<long double>(v - mu) * (v - mu);
      var = static_cast<double>(acc / static_cast<long double>(len));
    } else {
      mu = layer.running_mean[c];
      var = layer.running_var[c];
    }
    if (stats) {
      stats->mean[c] = mu;
      stats->var[c] = var;
    }
    const double scale = layer.gamma[c] / std::sqrt(var + kNormEpsilon);
    auto dst = out.row(c);
    for (std::size_t t = 0; t < len; ++t) dst[t] = (row[t] - mu) * scale + layer.beta[c];
  }
  return out;
}

void update_running_stats(NormLayer& layer, const NormStats& stats) {
  const double keep = layer.momentum;
  for (std::size_t c = 0; c < layer.channels(); ++c) {
    layer.running_mean[c] = keep * layer.running_mean[c] + (1.0 - keep) * stats.mean[c];
    layer.running_var[c] = keep * layer.running_var[c] + (1.0 - keep) * stats.var[c];
  }
}

Matrix norm_forward(const Matrix& x, NormLayer& layer, Mode mode) {
  NormStats stats;
  Matrix out = normalize(x, layer, mode, &stats);
  if (mode == Mode::kTrain) update_running_stats(layer, stats);
  return out;
}

ForwardResult fcn_forward(const FcnModel& model, const Waveform& noisy, Mode mode) {
  if (noisy.empty()) throw Error(ErrorCode::kInvalidArgument, "fcn_forward: empty input");
  model.validate();
  const std::size_t len = noisy.size();
  ForwardResult result;
  ForwardTape& tape = result.tape;
  const bool record = mode == Mode::kTrain;
  if (record) {
    tape.model_fingerprint = model.fingerprint();
    tape.length = len;
    tape.layers.resize(model.layers.size());
  }

  Matrix signal(1, len);
  std::copy(noisy.samples.begin(), noisy.samples.end(), signal.data().begin());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    Matrix z = conv1d_same(signal, layer.conv);
    if (record) tape.layers[l].input = std::move(signal);
    if (layer.norm) {
      if (record) {
        LayerTape& lt = tape.layers[l];
        NormLayer unit = make_norm(layer.norm->channels());
        lt.normalized = normalize(z, unit, Mode::kTrain, &lt.stats);
        lt.inv_std.resize(layer.norm->channels());
        for (std::size_t c = 0; c < lt.inv_std.size(); ++c) {
          lt.inv_std[c] = 1.0 / std::sqrt(lt.stats.var[c] + kNormEpsilon);
          auto row = z.row(c);
          const auto xhat = lt.normalized.row(c);
          for (std::size_t t = 0; t < len; ++t) {
            row[t] = layer.norm->gamma[c] * xhat[t] + layer.norm->beta[c];
          }
        }
      } else {
        z = normalize(z, *layer.norm, mode);
      }
    }
    for (double& v : z.data()) v = activate(v, layer.conv.activation, layer.conv.slope);
    signal = std::move(z);
  }
  result.enhanced = Waveform{signal.data(), noisy.sample_rate};
  if (record) tape.output = result.enhanced.samples;
  return result;
}

void commit_running_stats(FcnModel& model, const ForwardTape& tape) {
  if (tape.layers.size() != model.layers.size()) {
    throw Error(ErrorCode::kTapeMismatch, "commit_running_stats: tape does not match model");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (model.layers[l].norm) update_running_stats(*model.layers[l].norm, tape.layers[l].stats);
  }
}

Gradients Gradients::zeros_like(const FcnModel& model) {
  Gradients g;
  g.layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    g.layers[l].kernels.assign(layer.conv.kernels.size(), 0.0);
    g.layers[l].bias.assign(layer.conv.bias.size(), 0.0);
    if (layer.norm) {
      g.layers[l].gamma.assign(layer.norm->channels(), 0.0);
      g.layers[l].beta.assign(layer.norm->channels(), 0.0);
    }
  }
  return g;
}

void Gradients::add_scaled(const Gradients& other, double factor) {
  if (other.layers.size() != layers.size()) {
    throw Error(ErrorCode::kInvalidArgument, "Gradients::add_scaled: layer count mismatch");
  }
  auto axpy = [factor](std::vector<double>& dst, const std::vector<double>& src) {
    if (dst.size() != src.size()) {
      throw Error(ErrorCode::kInvalidArgument, "Gradients::add_scaled: shape mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    axpy(layers[l].kernels, other.layers[l].kernels);
    axpy(layers[l].bias, other.layers[l].bias);
    axpy(layers[l].gamma, other.layers[l].gamma);
    axpy(layers[l].beta, other.layers[l].beta);
  }
}

void Gradients::scale(double factor) {
  for (auto& l : layers) {
    for (auto* v : {&l.kernels, &l.bias, &l.gamma, &l.beta}) {
      for (double& x : *v) x *= factor;
    }
  }
}

std::vector<double> Gradients::flatten() const {
  std::vector<double> out;
  for (const auto& l : layers) {
    for (const auto* v : {&l.kernels, &l.bias, &l.gamma, &l.beta}) {
      out.insert(out.end(), v->begin(), v->end());
    }
  }
  return out;
}

Gradients fcn_backward(const FcnModel& model, const ForwardTape& tape,
                       std::span<const double> output_cotangent) {
  if (tape.empty()) {
    throw Error(ErrorCode::kTapeMismatch, "fcn_backward: tape is empty (infer-mode forward?)");
  }
  if (tape.model_fingerprint != model.fingerprint() ||
      tape.layers.size() != model.layers.size()) {
    throw Error(ErrorCode::kTapeMismatch, "fcn_backward: model changed since the forward pass");
  }
  if (output_cotangent.size() != tape.length) {
    throw Error(ErrorCode::kLengthMismatch, "fcn_backward: cotangent length mismatch");
  }
  const std::size_t len = tape.length;
  const long n = static_cast<long>(len);
  Gradients grads = Gradients::zeros_like(model);

  // Cotangent of the current layer's output.
  Matrix g_out(1, len);
  std::copy(output_cotangent.begin(), output_cotangent.end(), g_out.data().begin());

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const Layer& layer = model.layers[li];
    const LayerTape& lt = tape.layers[li];
    const ConvLayer& conv = layer.conv;
    const bool is_last = li + 1 == model.layers.size();

    // Through the activation, using the stored activation output.
    for (std::size_t c = 0; c < conv.out_ch; ++c) {
      auto g = g_out.row(c);
      const double* y = is_last ? tape.output.data() : tape.layers[li + 1].input.row(c).data();
      switch (conv.activation) {
        case Activation::kLeakyRelu:
          for (std::size_t t = 0; t < len; ++t) {
            if (y[t] < 0.0) g[t] *= conv.slope;
          }
          break;
        case Activation::kTanh:
          for (std::size_t t = 0; t < len; ++t) g[t] *= 1.0 - y[t] * y[t];
          break;
        case Activation::kLinear:
          break;
      }
    }

    // Through the normalization: g_out becomes the cotangent of the conv output.
    LayerGrad& lg = grads.layers[li];
    if (layer.norm) {
      const double inv_len = 1.0 / static_cast<double>(len);
      for (std::size_t c = 0; c < conv.out_ch; ++c) {
        auto g = g_out.row(c);
        const auto xhat = lt.normalized.row(c);
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          sum_g += g[t];
          sum_gx += g[t] * xhat[t];
        }
        lg.beta[c] = sum_g;
        lg.gamma[c] = sum_gx;
        const double gamma = layer.norm->gamma[c];
        const double mean_g = sum_g * gamma * inv_len;
        const double mean_gx = sum_gx * gamma * inv_len;
        const double s = lt.inv_std[c];
        for (std::size_t t = 0; t < len; ++t) {
          g[t] = s * (gamma * g[t] - mean_g - xhat[t] * mean_gx);
        }
      }
    }

    // Through the convolution.
    const long pad = static_cast<long>(conv.kernel_len / 2);
    Matrix g_in(conv.in_ch, len);
    for (std::size_t o = 0; o < conv.out_ch; ++o) {
      const double* g = g_out.row(o).data();
      double bsum = 0.0;
      for (std::size_t t = 0; t < len; ++t) bsum += g[t];
      lg.bias[o] = bsum;
      for (std::size_t i = 0; i < conv.in_ch; ++i) {
        const double* x = lt.input.row(i).data();
        double* gx = g_in.row(i).data();
        for (std::size_t k = 0; k < conv.kernel_len; ++k) {
          const long shift = static_cast<long>(k) - pad;
          const long t0 = std::max(0L, -shift);
          const long t1 = std::min(n, n - shift);
          const double w = conv.weight(o, i, k);
          double acc = 0.0;
          for (long t = t0; t < t1; ++t) {
            acc += g[t] * x[t + shift];
            gx[t + shift] += w * g[t];
          }
          lg.kernels[(o * conv.in_ch + i) * conv.kernel_len + k] = acc;
        }
      }
    }
    g_out = std::move(g_in);
  }
  grads.input_cotangent = std::move(g_out.data());
  return grads;
}

std::vector<double> flatten_parameters(const FcnModel& model) {
  std::vector<double> out;
  out.reserve(model.learnable_count());
  for (const auto& layer : model.layers) {
    out.insert(out.end(), layer.conv.kernels.begin(), layer.conv.kernels.end());
    out.insert(out.end(), layer.conv.bias.begin(), layer.conv.bias.end());
    if (layer.norm) {
      out.insert(out.end(), layer.norm->gamma.begin(), layer.norm->gamma.end());
      out.insert(out.end(), layer.norm->beta.begin(), layer.norm->beta.end());
    }
  }
  return out;
}

void assign_parameters(FcnModel& model, std::span<const double> values) {
  if (values.size() != model.learnable_count()) {
    throw Error(ErrorCode::kInvalidArgument, "assign_parameters: size mismatch");
  }
  std::size_t pos = 0;
  auto take = [&](std::vector<double>& dst) {
    std::copy(values.begin() + static_cast<long>(pos),
              values.begin() + static_cast<long>(pos + dst.size()), dst.begin());
    pos += dst.size();
  };
  for (auto& layer : model.layers) {
    take(layer.conv.kernels);
    take(layer.conv.bias);
    if (layer.norm) {
      take(layer.norm->gamma);
      take(layer.norm->beta);
    }
  }
}

void adam_step(FcnModel& model, const Gradients& grads, AdamState& state, double lr) {
  check_shapes(model, grads);
  std::vector<double> params = flatten_parameters(model);
  std::vector<double> flat;
  flat.reserve(params.size());
  for_each_param(model, grads, [&](const std::vector<double>&, const std::vector<double>& g) {
    flat.insert(flat.end(), g.begin(), g.end());
  });
  adam_update(params, flat, state, lr);
  assign_parameters(model, params);
}

FrequencyResponse first_layer_frequency_response(const FcnModel& model, std::size_t nfft,
                                                 double sample_rate, double split_hz) {
  if (model.layers.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "frequency response: model has no layers");
  }
  const ConvLayer& conv = model.layers.front().conv;
  if (!dsp::is_power_of_two(nfft) || nfft < conv.kernel_len) {
    throw Error(ErrorCode::kInvalidArgument,
                "frequency response: nfft must be a power of two >= kernel length");
  }
  const std::size_t bins = nfft / 2 + 1;
  const std::size_t filters = conv.out_ch * conv.in_ch;
  FrequencyResponse r;
  r.magnitude = Matrix(filters, bins);
  r.freqs_hz.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    r.freqs_hz[k] = sample_rate * static_cast<double>(k) / static_cast<double>(nfft);
  }
  double high = 0.0, total = 0.0;
  for (std::size_t f = 0; f < filters; ++f) {
    const std::span<const double> taps(conv.kernels.data() + f * conv.kernel_len, conv.kernel_len);
    const auto spec = dsp::rfft(taps, nfft);
    for (std::size_t k = 0; k < bins; ++k) {
      const double p = std::norm(spec[k]);
      r.magnitude(f, k) = std::sqrt(p);
      total += p;
      if (r.freqs_hz[k] > split_hz) high += p;
    }
  }
  r.high_band_ratio = total > 0.0 ? high / total : 0.0;
  return r;
}

}  // namespace fcnstoi::fcn
