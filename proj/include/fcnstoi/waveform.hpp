#pragma once

#include <cstddef>
#include <vector>

namespace fcnstoi {

// Mono utterance. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  bool operator==(const Waveform&) const = default;
};

}  // namespace fcnstoi
