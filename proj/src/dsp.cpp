#include "fcnstoi/dsp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fcnstoi/error.hpp"
#include "fft_plan.hpp"

namespace fcnstoi::dsp {

std::vector<double> hann_window(std::size_t frame_len) {
  if (frame_len < 2) {
    throw Error(ErrorCode::kInvalidArgument, "hann_window: frame_len must be >= 2");
  }
  std::vector<double> w(frame_len);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(frame_len);
  for (std::size_t n = 0; n < frame_len; ++n) {
    w[n] = 0.5 * (1.0 - std::cos(step * static_cast<double>(n)));
  }
  return w;
}

std::size_t frame_count(std::size_t length, std::size_t frame_len, std::size_t hop) {
  if (hop == 0 || length < frame_len) return 0;
  return (length - frame_len) / hop + 1;
}

FrameStack frame_signal(std::span<const double> wave, std::size_t frame_len,
                        std::size_t hop) {
  if (hop == 0) throw Error(ErrorCode::kInvalidArgument, "frame_signal: hop must be >= 1");
  const auto window = hann_window(frame_len);
  if (wave.size() < frame_len) {
    throw Error(ErrorCode::kTooShortSignal,
                "frame_signal: signal of " + std::to_string(wave.size()) +
                    " samples is shorter than one frame (" + std::to_string(frame_len) + ")");
  }
  const std::size_t count = frame_count(wave.size(), frame_len, hop);
  FrameStack out{Matrix(count, frame_len), hop, frame_len};
  for (std::size_t t = 0; t < count; ++t) {
    auto row = out.frames.row(t);
    const double* src = wave.data() + t * hop;
    for (std::size_t n = 0; n < frame_len; ++n) row[n] = window[n] * src[n];
  }
  return out;
}

std::vector<double> frame_signal_adjoint(std::size_t wave_len, const FrameStack& cotangent) {
  const auto window = hann_window(cotangent.frame_len);
  std::vector<double> grad(wave_len, 0.0);
  for (std::size_t t = 0; t < cotangent.count(); ++t) {
    const auto row = cotangent.frames.row(t);
    double* dst = grad.data() + t * cotangent.hop;
    for (std::size_t n = 0; n < cotangent.frame_len; ++n) dst[n] += window[n] * row[n];
  }
  return grad;
}

MagnitudeSpectrogram stft_magnitude(const FrameStack& frames, std::size_t nfft) {
  return stft_magnitude(frames, nfft, nullptr);
}

MagnitudeSpectrogram stft_magnitude(const FrameStack& frames, std::size_t nfft,
                                    FrameSpectra* keep) {
  if (!is_power_of_two(nfft)) {
    throw Error(ErrorCode::kInvalidArgument, "stft_magnitude: nfft must be a power of two");
  }
  if (nfft < frames.frame_len) {
    throw Error(ErrorCode::kInvalidArgument, "stft_magnitude: nfft shorter than frame");
  }
  const std::size_t n_bins = nfft / 2 + 1;
  const std::size_t n_frames = frames.count();
  const auto& plan = detail::RealFftPlan::get(nfft);

  MagnitudeSpectrogram out{Matrix(n_bins, n_frames), nfft};
  std::vector<double> padded(nfft, 0.0);
  std::vector<std::complex<double>> spec(n_bins);
  if (keep) {
    keep->bins.assign(n_bins * n_frames, {});
    keep->n_bins = n_bins;
    keep->n_frames = n_frames;
  }
  for (std::size_t t = 0; t < n_frames; ++t) {
    const auto row = frames.frames.row(t);
    std::copy(row.begin(), row.end(), padded.begin());
    plan.forward(padded.data(), spec.data());
    for (std::size_t k = 0; k < n_bins; ++k) {
      out.mags(k, t) = std::sqrt(std::norm(spec[k]) + kMagEpsilon);
    }
    if (keep) std::copy(spec.begin(), spec.end(), keep->bins.begin() + t * n_bins);
  }
  return out;
}

FrameStack stft_magnitude_adjoint(const FrameStack& frames, std::size_t nfft,
                                  const Matrix& mag_cotangent, const FrameSpectra* kept) {
  const std::size_t n_bins = nfft / 2 + 1;
  const std::size_t n_frames = frames.count();
  if (mag_cotangent.rows() != n_bins || mag_cotangent.cols() != n_frames) {
    throw Error(ErrorCode::kInvalidArgument, "stft_magnitude_adjoint: cotangent shape mismatch");
  }
  FrameSpectra local;
  if (!kept) {
    stft_magnitude(frames, nfft, &local);
    kept = &local;
  }
  const auto& plan = detail::RealFftPlan::get(nfft);
  FrameStack out{Matrix(n_frames, frames.frame_len), frames.hop, frames.frame_len};
  std::vector<std::complex<double>> half(n_bins);
  std::vector<double> time(nfft);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::complex<double>* spec = kept->bins.data() + t * n_bins;
    bool any = false;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double g = mag_cotangent(k, t);
      if (g != 0.0) any = true;
      const double mag = std::sqrt(std::norm(spec[k]) + kMagEpsilon);
      half[k] = (g / mag) * spec[k];
    }
    if (!any) continue;
    // Re(sum_{k=0}^{nfft/2} Z_k e^{+i 2 pi k n / nfft}) through a Hermitian
    // inverse: interior bins are halved because the inverse adds conj pairs.
    half[0] = {half[0].real(), 0.0};
    half[n_bins - 1] = {half[n_bins - 1].real(), 0.0};
    for (std::size_t k = 1; k + 1 < n_bins; ++k) half[k] *= 0.5;
    plan.inverse(half.data(), time.data());
    auto row = out.frames.row(t);
    std::copy(time.begin(), time.begin() + frames.frame_len, row.begin());
  }
  return out;
}

OctaveBandMap build_octave_band_map(double sample_rate, std::size_t nfft,
                                    std::size_t n_bands, double lowest_cf) {
  if (n_bands == 0) {
    throw Error(ErrorCode::kInvalidArgument, "build_octave_band_map: n_bands must be >= 1");
  }
  if (!(lowest_cf > 0.0) || !(sample_rate > 0.0) || nfft < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "build_octave_band_map: rates, nfft and lowest_cf must be positive");
  }
  OctaveBandMap map;
  map.n_bands = n_bands;
  map.n_bins = nfft / 2 + 1;
  map.membership.assign(n_bands * map.n_bins, 0);
  map.center_freqs.resize(n_bands);
  map.band_bins.resize(n_bands);
  const double bin_hz = sample_rate / static_cast<double>(nfft);
  for (std::size_t j = 0; j < n_bands; ++j) {
    const double fc = lowest_cf * std::pow(2.0, static_cast<double>(j) / 3.0);
    const double lo = fc * std::pow(2.0, -1.0 / 6.0);
    const double hi = fc * std::pow(2.0, 1.0 / 6.0);
    map.center_freqs[j] = fc;
    for (std::size_t k = 0; k < map.n_bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      if (f >= lo && f < hi) {
        map.membership[j * map.n_bins + k] = 1;
        map.band_bins[j].push_back(k);
      }
    }
  }
  return map;
}

Matrix band_power_sum(const Matrix& power, const OctaveBandMap& map) {
  if (power.rows() != map.n_bins) {
    throw Error(ErrorCode::kInvalidArgument, "band_power_sum: bin count mismatch");
  }
  Matrix out(map.n_bands, power.cols());
  for (std::size_t j = 0; j < map.n_bands; ++j) {
    auto dst = out.row(j);
    for (std::size_t k : map.band_bins[j]) {
      const auto src = power.row(k);
      for (std::size_t m = 0; m < dst.size(); ++m) dst[m] += src[m];
    }
  }
  return out;
}

Matrix band_power_sum_adjoint(const Matrix& cotangent, const OctaveBandMap& map) {
  if (cotangent.rows() != map.n_bands) {
    throw Error(ErrorCode::kInvalidArgument, "band_power_sum_adjoint: band count mismatch");
  }
  Matrix out(map.n_bins, cotangent.cols());
  for (std::size_t j = 0; j < map.n_bands; ++j) {
    const auto src = cotangent.row(j);
    for (std::size_t k : map.band_bins[j]) {
      auto dst = out.row(k);
      for (std::size_t m = 0; m < dst.size(); ++m) dst[m] += src[m];
    }
  }
  return out;
}

BandEnvelope band_envelope(const MagnitudeSpectrogram& mags, const OctaveBandMap& map) {
  Matrix power = mags.mags;
  for (double& v : power.data()) v *= v;
  BandEnvelope out{band_power_sum(power, map)};
  for (double& v : out.env.data()) v = std::sqrt(v);
  return out;
}

Matrix band_envelope_adjoint(const MagnitudeSpectrogram& mags, const OctaveBandMap& map,
                             const BandEnvelope& forward, const Matrix& env_cotangent) {
  if (env_cotangent.rows() != map.n_bands || env_cotangent.cols() != mags.frames() ||
      forward.env.rows() != map.n_bands || forward.env.cols() != mags.frames()) {
    throw Error(ErrorCode::kInvalidArgument, "band_envelope_adjoint: shape mismatch");
  }
  // d sqrt(s)/ds = 1 / (2 sqrt(s)); a zero band takes the zero subgradient.
  Matrix power_cot(map.n_bands, mags.frames());
  for (std::size_t i = 0; i < power_cot.size(); ++i) {
    const double x = forward.env.data()[i];
    power_cot.data()[i] = x > 0.0 ? env_cotangent.data()[i] / (2.0 * x) : 0.0;
  }
  Matrix out = band_power_sum_adjoint(power_cot, map);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= 2.0 * mags.mags.data()[i];
  return out;
}

OpId op_id_from_name(std::string_view name) {
  if (name == "frame_signal") return OpId::kFrameSignal;
  if (name == "stft_magnitude") return OpId::kStftMagnitude;
  if (name == "band_envelope") return OpId::kBandEnvelope;
  if (name == "resample_linear_phase") return OpId::kResampleLinearPhase;
  throw Error(ErrorCode::kInvalidArgument, "unknown op id '" + std::string(name) + "'");
}

std::vector<double> adjoint(OpId op, const AdjointInputs& in,
                            std::span<const double> output_cotangent) {
  auto require = [&](std::size_t expected) {
    if (output_cotangent.size() != expected) {
      throw Error(ErrorCode::kInvalidArgument, "adjoint: cotangent has wrong size");
    }
  };
  switch (op) {
    case OpId::kFrameSignal: {
      const std::size_t t = frame_count(in.wave.size(), in.frame_len, in.hop);
      require(t * in.frame_len);
      FrameStack cot{Matrix(t, in.frame_len), in.hop, in.frame_len};
      std::copy(output_cotangent.begin(), output_cotangent.end(), cot.frames.data().begin());
      return frame_signal_adjoint(in.wave.size(), cot);
    }
    case OpId::kStftMagnitude: {
      const std::size_t bins = in.nfft / 2 + 1;
      require(bins * in.frames.count());
      Matrix cot(bins, in.frames.count());
      std::copy(output_cotangent.begin(), output_cotangent.end(), cot.data().begin());
      return stft_magnitude_adjoint(in.frames, in.nfft, cot).frames.data();
    }
    case OpId::kBandEnvelope: {
      require(in.map.n_bands * in.mags.frames());
      Matrix cot(in.map.n_bands, in.mags.frames());
      std::copy(output_cotangent.begin(), output_cotangent.end(), cot.data().begin());
      return band_envelope_adjoint(in.mags, in.map, band_envelope(in.mags, in.map), cot).data();
    }
    case OpId::kResampleLinearPhase:
      return resample_adjoint(in.wave.size(), in.wave.sample_rate, in.target_rate,
                              output_cotangent);
  }
  throw Error(ErrorCode::kInvalidArgument, "adjoint: unknown op id");
}

}  // namespace fcnstoi::dsp
