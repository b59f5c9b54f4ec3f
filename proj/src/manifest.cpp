#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fcnstoi/dataset.hpp"
#include "fcnstoi/error.hpp"
#include "fcnstoi/file_util.hpp"
#include "fcnstoi/wav.hpp"

namespace fcnstoi::data {
namespace {

using nlohmann::json;

std::uint64_t id_seed(const std::string& id) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

void ManifestEntry::validate() const {
  if (utterance_id.empty()) throw Error(ErrorCode::kInvalidArgument, "manifest: empty utterance_id");
  if (clean_path.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "manifest: " + utterance_id + " has no clean_path");
  }
  const bool direct = noisy_path.has_value();
  const bool mixed = noise_path.has_value() && snr_db.has_value();
  if (direct == mixed || (direct && noise_path.has_value())) {
    throw Error(ErrorCode::kInvalidArgument,
                "manifest: " + utterance_id +
                    " needs exactly one of noisy_path or (noise_path, snr_db)");
  }
}

ManifestEntry parse_manifest_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("manifest: bad JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "manifest: line is not an object");
  ManifestEntry e;
  try {
    e.utterance_id = j.at("utterance_id").get<std::string>();
    e.clean_path = j.at("clean_path").get<std::string>();
    if (j.contains("noisy_path")) e.noisy_path = j["noisy_path"].get<std::string>();
    if (j.contains("noise_path")) e.noise_path = j["noise_path"].get<std::string>();
    if (j.contains("snr_db")) e.snr_db = j["snr_db"].get<double>();
    if (j.contains("mix_seed")) e.mix_seed = j["mix_seed"].get<std::uint64_t>();
    if (j.contains("split")) e.split = j["split"].get<std::string>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kInvalidArgument, std::string("manifest: ") + ex.what());
  }
  e.validate();
  return e;
}

std::string manifest_line(const ManifestEntry& e) {
  json j;
  j["utterance_id"] = e.utterance_id;
  j["clean_path"] = e.clean_path;
  if (e.noisy_path) j["noisy_path"] = *e.noisy_path;
  if (e.noise_path) j["noise_path"] = *e.noise_path;
  if (e.snr_db) j["snr_db"] = *e.snr_db;
  if (e.mix_seed) j["mix_seed"] = *e.mix_seed;
  j["split"] = e.split;
  return j.dump();
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_manifest_line(line));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& e : entries) out << manifest_line(e) << '\n';
  write_file_atomic(path, out.str());
}

UtterancePair load_pair(const ManifestEntry& entry, const std::filesystem::path& base_dir) {
  entry.validate();
  UtterancePair pair;
  pair.id = entry.utterance_id;
  pair.snr_db = entry.snr_db;
  pair.clean = audio::load_wav(resolve(entry.clean_path, base_dir));
  if (entry.noisy_path) {
    pair.noisy = audio::load_wav(resolve(*entry.noisy_path, base_dir));
    if (pair.noisy.size() != pair.clean.size() ||
        pair.noisy.sample_rate != pair.clean.sample_rate) {
      throw Error(ErrorCode::kLengthMismatch,
                  entry.utterance_id + ": noisy and clean files differ in length or rate");
    }
  } else {
    const Waveform noise = audio::load_wav(resolve(*entry.noise_path, base_dir));
    const std::uint64_t seed = entry.mix_seed.value_or(id_seed(entry.utterance_id));
    pair.noisy = mix_at_snr(pair.clean, noise, *entry.snr_db, seed).mixture;
  }
  return pair;
}

}  // namespace fcnstoi::data
