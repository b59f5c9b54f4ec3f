#pragma once

// Signal-processing kernels used by the intelligibility measure. Every
// differentiable kernel comes with an adjoint that maps an output cotangent
// back to an input cotangent (a vector-Jacobian product).

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "fcnstoi/matrix.hpp"
#include "fcnstoi/waveform.hpp"

namespace fcnstoi::dsp {

// Added under the square root of |X(k)|^2 so the magnitude is differentiable
// at zero bins.
inline constexpr double kMagEpsilon = 1e-12;

// Periodic Hann window, w[n] = 0.5 (1 - cos(2 pi n / frame_len)).
std::vector<double> hann_window(std::size_t frame_len);

struct FrameStack {
  Matrix frames;  // T x frame_len, each row windowed
  std::size_t hop = 0;
  std::size_t frame_len = 0;

  std::size_t count() const noexcept { return frames.rows(); }
};

// Number of full frames; trailing samples that do not fill a frame are
// dropped. Returns 0 when length < frame_len.
std::size_t frame_count(std::size_t length, std::size_t frame_len, std::size_t hop);

FrameStack frame_signal(std::span<const double> wave, std::size_t frame_len,
                        std::size_t hop);
std::vector<double> frame_signal_adjoint(std::size_t wave_len, const FrameStack& cotangent);

struct MagnitudeSpectrogram {
  Matrix mags;  // (nfft/2 + 1) x T
  std::size_t nfft = 0;

  std::size_t bins() const noexcept { return mags.rows(); }
  std::size_t frames() const noexcept { return mags.cols(); }
};

MagnitudeSpectrogram stft_magnitude(const FrameStack& frames, std::size_t nfft);

// Complex spectra retained from a forward pass: one row of nfft/2 + 1 bins per
// frame.
struct FrameSpectra {
  std::vector<std::complex<double>> bins;
  std::size_t n_bins = 0;
  std::size_t n_frames = 0;
};

MagnitudeSpectrogram stft_magnitude(const FrameStack& frames, std::size_t nfft,
                                    FrameSpectra* keep);

// Cotangent with respect to the (windowed) frames. Passing the spectra kept by
// the forward call avoids recomputing the transforms.
FrameStack stft_magnitude_adjoint(const FrameStack& frames, std::size_t nfft,
                                  const Matrix& mag_cotangent,
                                  const FrameSpectra* kept = nullptr);

struct OctaveBandMap {
  std::size_t n_bands = 0;
  std::size_t n_bins = 0;
  std::vector<std::uint8_t> membership;  // n_bands x n_bins, row-major
  std::vector<double> center_freqs;
  std::vector<std::vector<std::size_t>> band_bins;

  bool contains(std::size_t band, std::size_t bin) const {
    return membership[band * n_bins + bin] != 0;
  }
};

// Band j has centre lowest_cf * 2^(j/3) and covers bins whose centre
// frequency falls in [fc * 2^(-1/6), fc * 2^(1/6)).
OctaveBandMap build_octave_band_map(double sample_rate, std::size_t nfft,
                                    std::size_t n_bands, double lowest_cf);

struct BandEnvelope {
  Matrix env;  // n_bands x M
};

// Linear part of the envelope: per-band sums of a power spectrogram.
Matrix band_power_sum(const Matrix& power, const OctaveBandMap& map);
Matrix band_power_sum_adjoint(const Matrix& cotangent, const OctaveBandMap& map);

// X_j(m) = sqrt(sum_{k in band j} |mags(k, m)|^2).
BandEnvelope band_envelope(const MagnitudeSpectrogram& mags, const OctaveBandMap& map);
Matrix band_envelope_adjoint(const MagnitudeSpectrogram& mags, const OctaveBandMap& map,
                             const BandEnvelope& forward, const Matrix& env_cotangent);

// Real-input DFT of `input` zero-padded to nfft (a power of two); returns bins
// 0..nfft/2.
std::vector<std::complex<double>> rfft(std::span<const double> input, std::size_t nfft);
// Inverse of rfft including the 1/nfft factor.
std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t nfft);

bool is_power_of_two(std::size_t n) noexcept;

// Linear-phase polyphase resampler with a fixed Kaiser-windowed sinc. The
// conversion ratio target/source must reduce to p/q with p, q <= 64.
Waveform resample_linear_phase(const Waveform& wave, int target_rate);
std::vector<double> resample_adjoint(std::size_t source_len, int source_rate,
                                     int target_rate, std::span<const double> cotangent);
std::size_t resampled_length(std::size_t source_len, int source_rate, int target_rate);

// Generic adjoint entry point over the differentiable kernels above.
enum class OpId { kFrameSignal, kStftMagnitude, kBandEnvelope, kResampleLinearPhase };

OpId op_id_from_name(std::string_view name);

struct AdjointInputs {
  // frame_signal, resample_linear_phase
  Waveform wave;
  std::size_t frame_len = 0;
  std::size_t hop = 0;
  int target_rate = 0;
  // stft_magnitude
  FrameStack frames;
  std::size_t nfft = 0;
  // band_envelope
  MagnitudeSpectrogram mags;
  OctaveBandMap map;
};

// Returns the input cotangent flattened row-major: samples for
// frame_signal/resample, frames (T x frame_len) for stft_magnitude, and the
// spectrogram (bins x T) for band_envelope.
std::vector<double> adjoint(OpId op, const AdjointInputs& inputs,
                            std::span<const double> output_cotangent);

}  // namespace fcnstoi::dsp
