#include "fcnstoi/stoi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fcnstoi/error.hpp"

namespace fcnstoi::stoi {
namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double clip_factor(double clip_beta_db) { return 1.0 + std::pow(10.0, -clip_beta_db / 20.0); }

// Score of one segment pair and, optionally, d(score)/d(degraded segment).
double segment_score(std::span<const double> x, std::span<const double> y, double clip,
                     double eps, std::span<double> grad_y) {
  const std::size_t n = x.size();
  const double x_norm = norm2(x);
  const double y_norm = norm2(y);
  const double ratio = x_norm / (y_norm + eps);

  std::vector<double> clipped(n);
  std::vector<bool> bound(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double scaled = ratio * y[i];
    const double limit = clip * x[i];
    bound[i] = scaled > limit;
    clipped[i] = bound[i] ? limit : scaled;
  }

  const double mx = mean(x);
  const double mc = mean(clipped);
  std::vector<double> u(n), v(n);
  double p = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = x[i] - mx;
    v[i] = clipped[i] - mc;
    p += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double a = std::sqrt(uu) + eps;
  const double q = std::sqrt(vv);
  const double b = q + eps;
  const double raw = p / (a * b);
  if (std::isnan(raw)) {
    throw Error(ErrorCode::kNonFiniteValue, "stoi: correlation evaluated to NaN");
  }
  const double d = std::clamp(raw, -1.0, 1.0);
  if (grad_y.empty()) return d;

  std::fill(grad_y.begin(), grad_y.end(), 0.0);
  if (raw != d) return d;

  std::vector<double> g(n);
  const double inv_ab = 1.0 / (a * b);
  const double coef = q > 0.0 ? p / (a * b * b * q) : 0.0;
  double g_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = u[i] * inv_ab - coef * v[i];
    g_mean += g[i];
  }
  g_mean /= static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = bound[i] ? 0.0 : g[i] - g_mean;
    s += g[i] * y[i];
  }
  const double shrink = y_norm > 0.0 ? x_norm * s / (y_norm * (y_norm + eps) * (y_norm + eps)) : 0.0;
  for (std::size_t i = 0; i < n; ++i) grad_y[i] = ratio * g[i] - shrink * y[i];
  return d;
}

ActiveMask energy_mask(std::span<const double> samples, std::size_t frame_len, std::size_t hop,
                       double dyn_range_db) {
  const dsp::FrameStack frames = dsp::frame_signal(samples, frame_len, hop);
  std::vector<double> energy_db(frames.count());
  double loudest = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < frames.count(); ++t) {
    energy_db[t] = 20.0 * std::log10(norm2(frames.frames.row(t)));
    loudest = std::max(loudest, energy_db[t]);
  }
  if (!std::isfinite(loudest)) {
    throw Error(ErrorCode::kDegenerateReference, "stoi: clean reference is all zeros");
  }
  ActiveMask mask;
  mask.keep.resize(frames.count());
  for (std::size_t t = 0; t < frames.count(); ++t) {
    mask.keep[t] = energy_db[t] > loudest - dyn_range_db;
  }
  return mask;
}

ActiveMask energy_mask(std::span<const double> samples, const StoiConfig& cfg) {
  return energy_mask(samples, cfg.frame_len, cfg.hop, cfg.dyn_range_db);
}

std::vector<double> overlap_add_kept(std::span<const double> samples, const ActiveMask& mask,
                                     const StoiConfig& cfg) {
  const auto window = dsp::hann_window(cfg.frame_len);
  const std::size_t kept = mask.kept();
  std::vector<double> out(kept * cfg.hop + cfg.frame_len - cfg.hop, 0.0);
  std::size_t slot = 0;
  for (std::size_t t = 0; t < mask.keep.size(); ++t) {
    if (!mask.keep[t]) continue;
    const double* src = samples.data() + t * cfg.hop;
    double* dst = out.data() + slot * cfg.hop;
    for (std::size_t n = 0; n < cfg.frame_len; ++n) dst[n] += window[n] * src[n];
    ++slot;
  }
  return out;
}

void check_pair(const Waveform& clean, const Waveform& degraded) {
  if (clean.size() != degraded.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                "stoi: clean has " + std::to_string(clean.size()) + " samples, degraded has " +
                    std::to_string(degraded.size()));
  }
  if (clean.sample_rate != degraded.sample_rate) {
    throw Error(ErrorCode::kInvalidArgument, "stoi: clean and degraded sample rates differ");
  }
  auto finite = [](const Waveform& w) {
    return std::all_of(w.samples.begin(), w.samples.end(), [](double v) { return std::isfinite(v); });
  };
  if (!finite(clean) || !finite(degraded)) {
    throw Error(ErrorCode::kNonFiniteValue, "stoi: input contains NaN or infinity");
  }
}

Waveform to_analysis_rate(const Waveform& w, const StoiConfig& cfg) {
  if (w.sample_rate == cfg.analysis_rate) return w;
  return dsp::resample_linear_phase(w, cfg.analysis_rate);
}

// Forward state shared by the score and the gradient.
struct Forward {
  Waveform clean;
  Waveform estimate;
  ActiveMask mask;
  SilenceRemoved removed;
  dsp::OctaveBandMap map;
  dsp::FrameStack est_frames;
  dsp::FrameSpectra est_spectra;
  dsp::MagnitudeSpectrogram est_mags;
  dsp::BandEnvelope clean_env;
  dsp::BandEnvelope est_env;
};

Forward run_forward(const Waveform& clean_in, const Waveform& est_in, const StoiConfig& cfg,
                    bool keep_spectra) {
  cfg.validate();
  check_pair(clean_in, est_in);
  Forward f;
  f.clean = to_analysis_rate(clean_in, cfg);
  f.estimate = to_analysis_rate(est_in, cfg);
  if (f.clean.size() < cfg.frame_len) {
    throw Error(ErrorCode::kUtteranceTooShort,
                "stoi: utterance shorter than one analysis frame");
  }
  f.mask = energy_mask(f.clean.samples, cfg);
  f.removed = remove_silent_frames(f.clean, f.estimate, f.mask, cfg);
  if (f.mask.kept() < cfg.segment_len) {
    throw Error(ErrorCode::kUtteranceTooShort,
                "stoi: " + std::to_string(f.mask.kept()) + " active frames, need " +
                    std::to_string(cfg.segment_len));
  }
  f.map = dsp::build_octave_band_map(cfg.analysis_rate, cfg.nfft, cfg.n_bands, cfg.lowest_cf);

  const auto clean_frames = dsp::frame_signal(f.removed.clean.samples, cfg.frame_len, cfg.hop);
  f.clean_env = dsp::band_envelope(dsp::stft_magnitude(clean_frames, cfg.nfft), f.map);

  f.est_frames = dsp::frame_signal(f.removed.degraded.samples, cfg.frame_len, cfg.hop);
  f.est_mags = dsp::stft_magnitude(f.est_frames, cfg.nfft, keep_spectra ? &f.est_spectra : nullptr);
  f.est_env = dsp::band_envelope(f.est_mags, f.map);
  return f;
}

}  // namespace

void StoiConfig::validate() const {
  if (segment_len < 2) throw Error(ErrorCode::kInvalidArgument, "stoi: segment_len must be >= 2");
  if (hop == 0 || frame_len != 2 * hop) {
    throw Error(ErrorCode::kInvalidArgument, "stoi: frame_len must equal 2 * hop");
  }
  if (nfft < frame_len || !dsp::is_power_of_two(nfft)) {
    throw Error(ErrorCode::kInvalidArgument, "stoi: nfft must be a power of two >= frame_len");
  }
  if (analysis_rate <= 0 || n_bands == 0 || !(lowest_cf > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "stoi: invalid band configuration");
  }
}

std::size_t ActiveMask::kept() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
}

ActiveMask frame_activity(std::span<const double> samples, std::size_t frame_len,
                          std::size_t hop, double dyn_range_db) {
  return energy_mask(samples, frame_len, hop, dyn_range_db);
}

ActiveMask detect_active_frames(const Waveform& clean, const StoiConfig& cfg) {
  const Waveform at_rate = to_analysis_rate(clean, cfg);
  if (at_rate.size() < cfg.frame_len) {
    throw Error(ErrorCode::kUtteranceTooShort, "stoi: utterance shorter than one analysis frame");
  }
  return energy_mask(at_rate.samples, cfg);
}

SilenceRemoved remove_silent_frames(const Waveform& clean, const Waveform& degraded,
                                    const ActiveMask& mask, const StoiConfig& cfg) {
  check_pair(clean, degraded);
  if (mask.keep.size() != dsp::frame_count(clean.size(), cfg.frame_len, cfg.hop)) {
    throw Error(ErrorCode::kInvalidArgument, "remove_silent_frames: mask does not match signal");
  }
  if (mask.kept() == 0) {
    throw Error(ErrorCode::kDegenerateReference, "remove_silent_frames: no active frames");
  }
  return {Waveform{overlap_add_kept(clean.samples, mask, cfg), clean.sample_rate},
          Waveform{overlap_add_kept(degraded.samples, mask, cfg), degraded.sample_rate}};
}

std::vector<double> remove_silent_frames_adjoint(std::size_t source_len, const ActiveMask& mask,
                                                 const StoiConfig& cfg,
                                                 std::span<const double> cotangent) {
  const auto window = dsp::hann_window(cfg.frame_len);
  if (cotangent.size() != mask.kept() * cfg.hop + cfg.frame_len - cfg.hop) {
    throw Error(ErrorCode::kInvalidArgument, "remove_silent_frames_adjoint: length mismatch");
  }
  std::vector<double> grad(source_len, 0.0);
  std::size_t slot = 0;
  for (std::size_t t = 0; t < mask.keep.size(); ++t) {
    if (!mask.keep[t]) continue;
    const double* src = cotangent.data() + slot * cfg.hop;
    double* dst = grad.data() + t * cfg.hop;
    for (std::size_t n = 0; n < cfg.frame_len; ++n) dst[n] += window[n] * src[n];
    ++slot;
  }
  return grad;
}

std::vector<EnvelopeSegment> envelope_segments(const dsp::BandEnvelope& env, std::size_t n) {
  const std::size_t m_total = env.env.cols();
  if (n == 0 || m_total < n) {
    throw Error(ErrorCode::kUtteranceTooShort,
                "envelope_segments: " + std::to_string(m_total) + " frames, need " +
                    std::to_string(n));
  }
  std::vector<EnvelopeSegment> out;
  out.reserve(env.env.rows() * (m_total - n + 1));
  for (std::size_t j = 0; j < env.env.rows(); ++j) {
    const auto row = env.env.row(j);
    for (std::size_t m = n - 1; m < m_total; ++m) {
      out.push_back({j, m, std::vector<double>(row.begin() + (m + 1 - n), row.begin() + m + 1)});
    }
  }
  return out;
}

std::vector<double> normalize_clip(std::span<const double> clean_seg,
                                   std::span<const double> degraded_seg, double clip_beta_db,
                                   double eps) {
  if (clean_seg.size() != degraded_seg.size()) {
    throw Error(ErrorCode::kLengthMismatch, "normalize_clip: segment lengths differ");
  }
  const double ratio = norm2(clean_seg) / (norm2(degraded_seg) + eps);
  const double clip = clip_factor(clip_beta_db);
  std::vector<double> out(clean_seg.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(ratio * degraded_seg[i], clip * clean_seg[i]);
  }
  return out;
}

double intermediate_d(std::span<const double> clean_seg, std::span<const double> clipped_seg,
                      double eps) {
  if (clean_seg.size() != clipped_seg.size() || clean_seg.empty()) {
    throw Error(ErrorCode::kLengthMismatch, "intermediate_d: segment lengths differ");
  }
  const double mx = mean(clean_seg);
  const double my = mean(clipped_seg);
  double p = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < clean_seg.size(); ++i) {
    const double u = clean_seg[i] - mx;
    const double v = clipped_seg[i] - my;
    p += u * v;
    xx += u * u;
    yy += v * v;
  }
  const double d = p / ((std::sqrt(xx) + eps) * (std::sqrt(yy) + eps));
  if (std::isnan(d)) throw Error(ErrorCode::kNonFiniteValue, "intermediate_d: NaN");
  return std::clamp(d, -1.0, 1.0);
}

Matrix intermediate_scores(const Waveform& clean, const Waveform& degraded,
                           const StoiConfig& cfg) {
  const Forward f = run_forward(clean, degraded, cfg, false);
  const std::size_t n = cfg.segment_len;
  const std::size_t positions = f.clean_env.env.cols() - n + 1;
  const double clip = clip_factor(cfg.clip_beta_db);
  Matrix d(cfg.n_bands, positions);
  for (std::size_t j = 0; j < cfg.n_bands; ++j) {
    const auto x = f.clean_env.env.row(j);
    const auto y = f.est_env.env.row(j);
    for (std::size_t s = 0; s < positions; ++s) {
      d(j, s) = segment_score(x.subspan(s, n), y.subspan(s, n), clip, cfg.eps, {});
    }
  }
  return d;
}

double stoi_score(const Waveform& clean, const Waveform& degraded, const StoiConfig& cfg) {
  const Matrix d = intermediate_scores(clean, degraded, cfg);
  return std::accumulate(d.data().begin(), d.data().end(), 0.0) / static_cast<double>(d.size());
}

StoiGradient stoi_gradient(const Waveform& clean, const Waveform& estimate,
                           const StoiConfig& cfg) {
  const Forward f = run_forward(clean, estimate, cfg, true);
  const std::size_t n = cfg.segment_len;
  const std::size_t m_total = f.est_env.env.cols();
  const std::size_t positions = m_total - n + 1;
  const double clip = clip_factor(cfg.clip_beta_db);
  const double weight = 1.0 / static_cast<double>(cfg.n_bands * positions);

  Matrix env_cot(cfg.n_bands, m_total);
  std::vector<double> seg_grad(n);
  double total = 0.0;
  for (std::size_t j = 0; j < cfg.n_bands; ++j) {
    const auto x = f.clean_env.env.row(j);
    const auto y = f.est_env.env.row(j);
    auto cot = env_cot.row(j);
    for (std::size_t s = 0; s < positions; ++s) {
      total += segment_score(x.subspan(s, n), y.subspan(s, n), clip, cfg.eps, seg_grad);
      for (std::size_t i = 0; i < n; ++i) cot[s + i] += weight * seg_grad[i];
    }
  }

  StoiGradient out;
  out.score = total / static_cast<double>(cfg.n_bands * positions);
  const Matrix mag_cot = dsp::band_envelope_adjoint(f.est_mags, f.map, f.est_env, env_cot);
  const dsp::FrameStack frame_cot =
      dsp::stft_magnitude_adjoint(f.est_frames, cfg.nfft, mag_cot, &f.est_spectra);
  const auto removed_cot = dsp::frame_signal_adjoint(f.removed.degraded.size(), frame_cot);
  auto analysis_cot = remove_silent_frames_adjoint(f.estimate.size(), f.mask, cfg, removed_cot);
  if (estimate.sample_rate == cfg.analysis_rate) {
    out.grad = std::move(analysis_cot);
  } else {
    out.grad = dsp::resample_adjoint(estimate.size(), estimate.sample_rate, cfg.analysis_rate,
                                     analysis_cot);
  }
  return out;
}

}  // namespace fcnstoi::stoi
