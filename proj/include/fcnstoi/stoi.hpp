#pragma once

// Short-time objective intelligibility (evaluation and differentiable modes).
//
// Pipeline: resample to the analysis rate, drop frames more than
// dyn_range_db below the loudest clean frame, Hann-windowed STFT,
// one-third-octave band envelopes, N-frame segments, per-segment level
// normalization with clipping, and the mean correlation coefficient.

#include <cstddef>
#include <span>
#include <vector>

#include "fcnstoi/dsp.hpp"
#include "fcnstoi/matrix.hpp"
#include "fcnstoi/waveform.hpp"

namespace fcnstoi::stoi {

struct StoiConfig {
  int analysis_rate = 10000;
  std::size_t frame_len = 256;
  std::size_t hop = 128;
  std::size_t nfft = 512;
  std::size_t n_bands = 15;
  double lowest_cf = 150.0;
  std::size_t segment_len = 30;
  double dyn_range_db = 40.0;
  double clip_beta_db = -15.0;
  double eps = 1e-12;

  // Throws kInvalidArgument when the invariants (N >= 2, 50% overlap,
  // nfft >= frame_len, power-of-two nfft) do not hold.
  void validate() const;
};

struct ActiveMask {
  std::vector<bool> keep;

  std::size_t kept() const;
};

ActiveMask detect_active_frames(const Waveform& clean, const StoiConfig& cfg);

// Energy rule on raw samples with an arbitrary Hann frame geometry: frame t
// is kept iff its level is within dyn_range_db of the loudest frame.
ActiveMask frame_activity(std::span<const double> samples, std::size_t frame_len,
                          std::size_t hop, double dyn_range_db);

struct SilenceRemoved {
  Waveform clean;
  Waveform degraded;
};

// Overlap-adds only the kept windowed frames of both signals.
SilenceRemoved remove_silent_frames(const Waveform& clean, const Waveform& degraded,
                                    const ActiveMask& mask, const StoiConfig& cfg);
// Adjoint of the degraded branch of remove_silent_frames.
std::vector<double> remove_silent_frames_adjoint(std::size_t source_len,
                                                 const ActiveMask& mask,
                                                 const StoiConfig& cfg,
                                                 std::span<const double> cotangent);

struct EnvelopeSegment {
  std::size_t band = 0;
  std::size_t frame = 0;  // last frame index m (0-based) of the window
  std::vector<double> values;
};

// Trailing N-frame windows of every band row, for m = N-1 .. M-1.
std::vector<EnvelopeSegment> envelope_segments(const dsp::BandEnvelope& env, std::size_t n);

// Scales degraded to the clean segment's norm, then clips at
// (1 + 10^(-beta/20)) times the clean envelope.
std::vector<double> normalize_clip(std::span<const double> clean_seg,
                                   std::span<const double> degraded_seg, double clip_beta_db,
                                   double eps = 1e-12);

// Correlation coefficient of two segments, clamped to [-1, 1].
double intermediate_d(std::span<const double> clean_seg, std::span<const double> clipped_seg,
                      double eps = 1e-12);

// d_{j,m} for every band and segment position.
Matrix intermediate_scores(const Waveform& clean, const Waveform& degraded,
                           const StoiConfig& cfg = {});

double stoi_score(const Waveform& clean, const Waveform& degraded, const StoiConfig& cfg = {});

struct StoiGradient {
  double score = 0.0;
  std::vector<double> grad;  // d score / d estimate, one entry per input sample
};

// The step-1 mask depends only on the clean reference and is constant here;
// the clipping branch and the [-1, 1] clamp use their local subgradients.
StoiGradient stoi_gradient(const Waveform& clean, const Waveform& estimate,
                           const StoiConfig& cfg = {});

}  // namespace fcnstoi::stoi
