#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "fcnstoi/dataset.hpp"
#include "fcnstoi/synth.hpp"
#include "fcnstoi/waveform.hpp"

namespace testing {

inline std::vector<double> randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double rel_err(double a, double b) {
  const double s = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / s;
}

// Speech-like clean signal plus white noise at the given SNR.
inline fcnstoi::data::UtterancePair noisy_pair(double seconds, int rate, std::uint64_t seed,
                                               double snr_db = 0.0) {
  using namespace fcnstoi;
  data::UtterancePair p;
  p.id = "pair" + std::to_string(seed);
  p.clean = synth::speech_like(seconds, rate, seed);
  const Waveform n = synth::noise(synth::NoiseType::kWhite, p.clean.size(), rate, seed + 1000);
  p.noisy = data::mix_at_snr(p.clean, n, snr_db, seed).mixture;
  p.snr_db = snr_db;
  return p;
}

}  // namespace testing
