#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fcnstoi/waveform.hpp"

namespace fcnstoi::audio {

// RIFF/WAVE, 16-bit PCM, mono only. Samples map to [-1, 1) by 1/32768.
Waveform decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const Waveform& wave);

Waveform load_wav(const std::filesystem::path& path);
void save_wav(const Waveform& wave, const std::filesystem::path& path);

std::int16_t to_pcm16(double sample);

}  // namespace fcnstoi::audio
