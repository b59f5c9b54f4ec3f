#include "fcnstoi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace fcnstoi::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double raised_cosine(double pos, double len) {
  return 0.5 * (1.0 - std::cos(kTwoPi * pos / len));
}

// Gain of a two-pole resonator style bump centred on `centre` Hz.
double formant_gain(double f, double centre, double width) {
  const double x = (f - centre) / width;
  return 1.0 / (1.0 + x * x);
}

}  // namespace

Waveform speech_like(double seconds, int sample_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double fs = static_cast<double>(sample_rate);
  const auto total = static_cast<std::size_t>(seconds * fs);
  Waveform w{std::vector<double>(total, 0.0), sample_rate};

  const double nyquist_guard = std::min(4500.0, 0.45 * fs);
  std::size_t pos = static_cast<std::size_t>((0.05 + 0.05 * uni(rng)) * fs);
  while (pos < total) {
    const bool voiced = uni(rng) < 0.7;
    const auto len = static_cast<std::size_t>((voiced ? 0.12 + 0.18 * uni(rng)
                                                      : 0.06 + 0.08 * uni(rng)) * fs);
    const std::size_t end = std::min(total, pos + len);
    const double level = 0.15 + 0.25 * uni(rng);
    if (voiced) {
      const double f0_start = 100.0 + 120.0 * uni(rng);
      const double f0_end = f0_start * (0.8 + 0.4 * uni(rng));
      const double f1 = 300.0 + 500.0 * uni(rng);
      const double f2 = 900.0 + 1600.0 * uni(rng);
      double phase = 0.0;
      for (std::size_t t = pos; t < end; ++t) {
        const double frac = static_cast<double>(t - pos) / static_cast<double>(len);
        const double f0 = f0_start + (f0_end - f0_start) * frac;
        phase += kTwoPi * f0 / fs;
        double s = 0.0;
        for (int h = 1; f0 * h < nyquist_guard; ++h) {
          const double f = f0 * h;
          const double gain = formant_gain(f, f1, 150.0) + 0.6 * formant_gain(f, f2, 250.0) +
                              0.05 / h;
          s += gain * std::sin(phase * h);
        }
        w.samples[t] =
            level * 0.3 * s * raised_cosine(static_cast<double>(t - pos), static_cast<double>(len));
      }
    } else {
      // Fricative: first-difference (high-pass) of white noise, smoothed once
      // to keep most energy between roughly 2 and 5 kHz.
      double prev = 0.0, smooth = 0.0;
      for (std::size_t t = pos; t < end; ++t) {
        const double x = gauss(rng);
        const double hp = x - prev;
        prev = x;
        smooth = 0.6 * smooth + 0.4 * hp;
        w.samples[t] = level * 0.25 * smooth *
                       raised_cosine(static_cast<double>(t - pos), static_cast<double>(len));
      }
    }
    const auto gap = static_cast<std::size_t>((0.04 + 0.12 * uni(rng)) * fs);
    pos = end + gap;
  }
  // Trailing pause so every utterance ends in silence.
  const auto tail = static_cast<std::size_t>(0.05 * fs);
  std::fill(w.samples.end() - static_cast<long>(std::min(tail, total)), w.samples.end(), 0.0);
  const double peak = std::max(1e-9, std::abs(*std::max_element(
                                         w.samples.begin(), w.samples.end(),
                                         [](double a, double b) { return std::abs(a) < std::abs(b); })));
  for (double& v : w.samples) v *= 0.5 / peak;
  return w;
}

Waveform noise(NoiseType type, std::size_t length, int sample_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Waveform w{std::vector<double>(length, 0.0), sample_rate};
  const double fs = static_cast<double>(sample_rate);
  switch (type) {
    case NoiseType::kWhite:
      for (double& v : w.samples) v = 0.1 * gauss(rng);
      break;
    case NoiseType::kEngine: {
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      const double hum = 40.0 + 40.0 * uni(rng);
      double lp = 0.0;
      for (std::size_t t = 0; t < length; ++t) {
        lp = 0.97 * lp + 0.03 * gauss(rng);
        const double time = static_cast<double>(t) / fs;
        double tone = 0.0;
        for (int h = 1; h <= 6; ++h) tone += std::sin(kTwoPi * hum * h * time) / h;
        w.samples[t] = 0.3 * lp + 0.03 * tone;
      }
      break;
    }
  }
  return w;
}

}  // namespace fcnstoi::synth
