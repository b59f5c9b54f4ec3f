#pragma once

// Training objectives. Each returns the scalar loss for one utterance and
// its derivative with respect to every estimated sample.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fcnstoi/stoi.hpp"
#include "fcnstoi/waveform.hpp"

namespace fcnstoi::losses {

enum class LossKind { kMse, kNegStoi, kMsePlusStoi, kConditional };

LossKind parse_loss_kind(std::string_view name);
const char* loss_kind_name(LossKind kind);

// Region split for the conditional loss. Zero frame_len / hop mean "the STOI
// analysis frame scaled to the signal's own rate".
struct SilentRule {
  std::size_t frame_len = 0;
  std::size_t hop = 0;
  double dyn_range_db = 40.0;
};

struct LossSpec {
  LossKind kind = LossKind::kNegStoi;
  double alpha = 100.0;
  stoi::StoiConfig stoi;
  SilentRule silent;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  std::vector<double> cotangent;
  bool silent_term_skipped = false;  // conditional loss with no silent samples
};

LossValue mse_loss(const Waveform& clean, const Waveform& estimate);
LossValue neg_stoi_loss(const Waveform& clean, const Waveform& estimate,
                        const stoi::StoiConfig& cfg = {});
LossValue combined_loss(const Waveform& clean, const Waveform& estimate, double alpha = 100.0,
                        const stoi::StoiConfig& cfg = {});

// Samples of `clean` that lie only in frames dropped by the energy rule
// (samples covered by no frame count as silent).
std::vector<bool> silent_samples(const Waveform& clean, const SilentRule& rule,
                                 const stoi::StoiConfig& cfg = {});

// (alpha / |S|) * sum over silent samples of (w - w_hat)^2 minus STOI.
// Experimental: this objective tends to shrink the output instead of
// improving intelligibility.
LossValue conditional_loss(const Waveform& clean, const Waveform& estimate, double alpha,
                           const SilentRule& rule, const stoi::StoiConfig& cfg = {});

LossValue evaluate_loss(const LossSpec& spec, const Waveform& clean, const Waveform& estimate);

}  // namespace fcnstoi::losses
