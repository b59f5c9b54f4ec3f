#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fcnstoi/waveform.hpp"

namespace fcnstoi::data {

struct MixResult {
  Waveform mixture;
  double noise_gain = 1.0;        // g applied to the cropped noise
  std::size_t noise_offset = 0;   // crop start inside the noise recording
  double peak_scale = 1.0;        // anti-clip factor applied afterwards (1 if none)
};

// Mixes clean with a seeded crop of noise so that
// 10 log10(P_clean / P_scaled_noise) = snr_db over the whole utterance, then
// rescales the mixture to a 0.95 peak if it would clip.
MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                     std::uint64_t seed);

double mean_square(const std::vector<double>& x);

// One utterance of a JSON-lines manifest. Either noisy_path is set, or
// noise_path together with snr_db (mixed on the fly).
struct ManifestEntry {
  std::string utterance_id;
  std::string clean_path;
  std::optional<std::string> noisy_path;
  std::optional<std::string> noise_path;
  std::optional<double> snr_db;
  std::optional<std::uint64_t> mix_seed;
  std::string split = "train";

  void validate() const;
};

ManifestEntry parse_manifest_line(const std::string& line);
std::string manifest_line(const ManifestEntry& entry);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

struct UtterancePair {
  std::string id;
  Waveform clean;
  Waveform noisy;
  std::optional<double> snr_db;
};

// Relative paths resolve against base_dir (normally the manifest's folder).
UtterancePair load_pair(const ManifestEntry& entry, const std::filesystem::path& base_dir);

}  // namespace fcnstoi::data
