#pragma once

#include <cstddef>
#include <cstdint>

#include "fcnstoi/waveform.hpp"

namespace fcnstoi::synth {

// Speech-like test signal: voiced syllables (harmonic series with a gliding
// pitch and formant-shaped amplitudes), fricative bursts of band-passed noise,
// and exact-zero pauses between them. Deterministic in seed.
Waveform speech_like(double seconds, int sample_rate, std::uint64_t seed);

enum class NoiseType { kWhite, kEngine };

// kWhite: Gaussian white noise. kEngine: low-passed noise plus a harmonic hum.
Waveform noise(NoiseType type, std::size_t length, int sample_rate, std::uint64_t seed);

}  // namespace fcnstoi::synth
