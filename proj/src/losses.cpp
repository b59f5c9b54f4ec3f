#include "fcnstoi/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fcnstoi/error.hpp"

namespace fcnstoi::losses {
namespace {

void check_lengths(const Waveform& clean, const Waveform& estimate) {
  if (clean.size() != estimate.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                "loss: clean has " + std::to_string(clean.size()) + " samples, estimate has " +
                    std::to_string(estimate.size()));
  }
  if (clean.empty()) throw Error(ErrorCode::kInvalidArgument, "loss: empty utterance");
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "mse") return LossKind::kMse;
  if (name == "stoi" || name == "neg_stoi") return LossKind::kNegStoi;
  if (name == "mse+stoi" || name == "mse_plus_stoi") return LossKind::kMsePlusStoi;
  if (name == "conditional") return LossKind::kConditional;
  throw Error(ErrorCode::kInvalidArgument, "unknown loss '" + std::string(name) + "'");
}

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kMse: return "mse";
    case LossKind::kNegStoi: return "stoi";
    case LossKind::kMsePlusStoi: return "mse+stoi";
    case LossKind::kConditional: return "conditional";
  }
  return "unknown";
}

void LossSpec::validate() const {
  if ((kind == LossKind::kMsePlusStoi || kind == LossKind::kConditional) && !(alpha >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "loss: alpha must be non-negative");
  }
  stoi.validate();
}

LossValue mse_loss(const Waveform& clean, const Waveform& estimate) {
  check_lengths(clean, estimate);
  const double inv_len = 1.0 / static_cast<double>(clean.size());
  LossValue out;
  out.cotangent.resize(clean.size());
  long double sum = 0.0L;
  for (std::size_t t = 0; t < clean.size(); ++t) {
    const double diff = estimate.samples[t] - clean.samples[t];
    sum += static_cast<long double>(diff) * diff;
    out.cotangent[t] = 2.0 * diff * inv_len;
  }
  out.value = static_cast<double>(sum) * inv_len;
  return out;
}

LossValue neg_stoi_loss(const Waveform& clean, const Waveform& estimate,
                        const stoi::StoiConfig& cfg) {
  check_lengths(clean, estimate);
  stoi::StoiGradient g = stoi::stoi_gradient(clean, estimate, cfg);
  LossValue out;
  out.value = -g.score;
  out.cotangent = std::move(g.grad);
  for (double& v : out.cotangent) v = -v;
  return out;
}

LossValue combined_loss(const Waveform& clean, const Waveform& estimate, double alpha,
                        const stoi::StoiConfig& cfg) {
  const LossValue mse = mse_loss(clean, estimate);
  LossValue out = neg_stoi_loss(clean, estimate, cfg);
  out.value = alpha * mse.value + out.value;
  for (std::size_t t = 0; t < out.cotangent.size(); ++t) {
    out.cotangent[t] = alpha * mse.cotangent[t] + out.cotangent[t];
  }
  return out;
}

std::vector<bool> silent_samples(const Waveform& clean, const SilentRule& rule,
                                 const stoi::StoiConfig& cfg) {
  std::size_t frame_len = rule.frame_len;
  std::size_t hop = rule.hop;
  if (frame_len == 0) {
    const double scaled = static_cast<double>(cfg.frame_len) * clean.sample_rate /
                          static_cast<double>(cfg.analysis_rate);
    frame_len = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(scaled / 2.0)) * 2);
  }
  if (hop == 0) hop = frame_len / 2;
  const stoi::ActiveMask mask = stoi::frame_activity(clean.samples, frame_len, hop, rule.dyn_range_db);
  std::vector<bool> silent(clean.size(), true);
  for (std::size_t t = 0; t < mask.keep.size(); ++t) {
    if (!mask.keep[t]) continue;
    for (std::size_t n = 0; n < frame_len; ++n) silent[t * hop + n] = false;
  }
  return silent;
}

LossValue conditional_loss(const Waveform& clean, const Waveform& estimate, double alpha,
                           const SilentRule& rule, const stoi::StoiConfig& cfg) {
  check_lengths(clean, estimate);
  LossValue out = neg_stoi_loss(clean, estimate, cfg);
  const std::vector<bool> silent = silent_samples(clean, rule, cfg);
  std::size_t count = 0;
  for (bool s : silent) count += s ? 1 : 0;
  if (count == 0) {
    out.silent_term_skipped = true;
    return out;
  }
  const double scale = alpha / static_cast<double>(count);
  long double sum = 0.0L;
  for (std::size_t t = 0; t < clean.size(); ++t) {
    if (!silent[t]) continue;
    const double diff = estimate.samples[t] - clean.samples[t];
    sum += static_cast<long double>(diff) * diff;
    out.cotangent[t] += 2.0 * scale * diff;
  }
  out.value += scale * static_cast<double>(sum);
  return out;
}

LossValue evaluate_loss(const LossSpec& spec, const Waveform& clean, const Waveform& estimate) {
  switch (spec.kind) {
    case LossKind::kMse: return mse_loss(clean, estimate);
    case LossKind::kNegStoi: return neg_stoi_loss(clean, estimate, spec.stoi);
    case LossKind::kMsePlusStoi: return combined_loss(clean, estimate, spec.alpha, spec.stoi);
    case LossKind::kConditional:
      return conditional_loss(clean, estimate, spec.alpha, spec.silent, spec.stoi);
  }
  throw Error(ErrorCode::kInvalidArgument, "loss: unknown kind");
}

}  // namespace fcnstoi::losses
