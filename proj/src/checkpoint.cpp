#include <cstring>
#include <string>

#include "fcnstoi/error.hpp"
#include "fcnstoi/fcn.hpp"
#include "fcnstoi/file_util.hpp"

namespace fcnstoi::fcn {
namespace {

constexpr char kMagic[4] = {'F', 'C', 'N', 'W'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    u32(bits);
  }
  void f32s(const std::vector<double>& v) {
    for (double x : v) f32(x);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void set_context(std::string context) { context_ = std::move(context); }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return static_cast<double>(f);
  }
  std::vector<double> f32s(std::size_t n) {
    need(n * 4);
    std::vector<double> v(n);
    for (double& x : v) x = f32();
    return v;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::kCheckpointFormat,
                  "checkpoint truncated" + (context_.empty() ? "" : " in " + context_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const FcnModel& model) {
  model.validate();
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    const ConvLayer& c = layer.conv;
    w.u32(static_cast<std::uint32_t>(c.in_ch));
    w.u32(static_cast<std::uint32_t>(c.out_ch));
    w.u32(static_cast<std::uint32_t>(c.kernel_len));
    w.u8(static_cast<std::uint8_t>(c.activation));
    w.u8(layer.norm ? 1 : 0);
    w.f32(c.slope);
    w.f32s(c.kernels);
    w.f32s(c.bias);
    if (layer.norm) {
      w.f32s(layer.norm->gamma);
      w.f32s(layer.norm->beta);
      w.f32s(layer.norm->running_mean);
      w.f32s(layer.norm->running_var);
      w.f32(layer.norm->momentum);
    }
  }
  return w.take();
}

FcnModel parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.set_context("header");
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::kCheckpointFormat, "checkpoint: bad magic (expected FCNW)");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw Error(ErrorCode::kCheckpointFormat,
                "checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0 || n_layers > 4096) {
    throw Error(ErrorCode::kCheckpointFormat,
                "checkpoint: implausible layer count " + std::to_string(n_layers));
  }
  FcnModel model;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    r.set_context("layer " + std::to_string(l));
    ConvLayer c;
    c.in_ch = r.u32();
    c.out_ch = r.u32();
    c.kernel_len = r.u32();
    if (c.in_ch > 65536 || c.out_ch > 65536 || c.kernel_len > 65536) {
      throw Error(ErrorCode::kCheckpointFormat,
                  "checkpoint: layer " + std::to_string(l) + " has implausible dimensions");
    }
    const std::uint8_t act = r.u8();
    if (act > 2) {
      throw Error(ErrorCode::kCheckpointFormat,
                  "checkpoint: layer " + std::to_string(l) + " has unknown activation code " +
                      std::to_string(act));
    }
    c.activation = static_cast<Activation>(act);
    const std::uint8_t has_norm = r.u8();
    c.slope = r.f32();
    c.kernels = r.f32s(c.out_ch * c.in_ch * c.kernel_len);
    c.bias = r.f32s(c.out_ch);
    Layer layer{std::move(c), std::nullopt};
    if (has_norm) {
      NormLayer n;
      const std::size_t ch = layer.conv.out_ch;
      n.gamma = r.f32s(ch);
      n.beta = r.f32s(ch);
      n.running_mean = r.f32s(ch);
      n.running_var = r.f32s(ch);
      n.momentum = r.f32();
      layer.norm = std::move(n);
    }
    model.layers.push_back(std::move(layer));
  }
  if (!r.at_end()) throw Error(ErrorCode::kCheckpointFormat, "checkpoint: trailing bytes");
  try {
    model.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("checkpoint: ") + e.what());
  }
  return model;
}

void save_checkpoint(const FcnModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

FcnModel load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace fcnstoi::fcn
