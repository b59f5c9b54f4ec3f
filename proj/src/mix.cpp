#include <algorithm>
#include <cmath>
#include <random>

#include "fcnstoi/dataset.hpp"
#include "fcnstoi/error.hpp"

namespace fcnstoi::data {

double mean_square(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                     std::uint64_t seed) {
  if (clean.sample_rate != noise.sample_rate) {
    throw Error(ErrorCode::kInvalidMix, "mix: clean and noise sample rates differ");
  }
  if (noise.size() < clean.size()) {
    throw Error(ErrorCode::kInvalidMix, "mix: noise is shorter than the clean utterance");
  }
  if (!std::isfinite(snr_db)) throw Error(ErrorCode::kInvalidMix, "mix: SNR must be finite");

  MixResult out;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, noise.size() - clean.size());
  out.noise_offset = pick(rng);
  const std::vector<double> crop(noise.samples.begin() + static_cast<long>(out.noise_offset),
                                 noise.samples.begin() +
                                     static_cast<long>(out.noise_offset + clean.size()));

  const double p_clean = mean_square(clean.samples);
  const double p_noise = mean_square(crop);
  if (!(p_clean > 0.0)) throw Error(ErrorCode::kInvalidMix, "mix: clean utterance is silent");
  if (!(p_noise > 0.0)) throw Error(ErrorCode::kInvalidMix, "mix: noise segment is silent");

  out.noise_gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  out.mixture.sample_rate = clean.sample_rate;
  out.mixture.samples.resize(clean.size());
  double peak = 0.0;
  for (std::size_t t = 0; t < clean.size(); ++t) {
    out.mixture.samples[t] = clean.samples[t] + out.noise_gain * crop[t];
    peak = std::max(peak, std::abs(out.mixture.samples[t]));
  }
  if (peak > 1.0) {
    out.peak_scale = 0.95 / peak;
    for (double& v : out.mixture.samples) v *= out.peak_scale;
  }
  return out;
}

}  // namespace fcnstoi::data
