#include "fcnstoi/wav.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "fcnstoi/error.hpp"
#include "fcnstoi/file_util.hpp"

namespace fcnstoi::audio {
namespace {

std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

[[noreturn]] void bad(const std::string& what) {
  throw Error(ErrorCode::kWavFormat, "wav: " + what);
}

}  // namespace

std::int16_t to_pcm16(double sample) {
  const double scaled = std::nearbyint(sample * 32768.0);
  if (!(scaled > -32768.0)) return -32768;  // also maps NaN to the floor
  if (scaled > 32767.0) return 32767;
  return static_cast<std::int16_t>(scaled);
}

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0) bad("missing RIFF header");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) bad("RIFF form is not WAVE");

  bool have_fmt = false;
  std::uint16_t format_tag = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) bad("fmt chunk too short");
      format_tag = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format_tag == 0xFFFE && size >= 40) {
        // WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the tag.
        format_tag = le16(bytes.data() + body + 24);
      }
      if (format_tag != 1) bad("format_tag=" + std::to_string(format_tag) + " (need PCM 1)");
      if (channels != 1) bad("channels=" + std::to_string(channels));
      if (bits != 16) bad("bits_per_sample=" + std::to_string(bits));
      if (rate == 0 || rate > 1000000) bad("sample_rate=" + std::to_string(rate));
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) bad("data chunk before fmt chunk");
      const std::size_t avail = bytes.size() - body;
      if (size > avail) bad("data chunk size=" + std::to_string(size) + " exceeds file");
      if (size % 2 != 0) bad("data chunk size=" + std::to_string(size) + " is not whole samples");
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(le16(bytes.data() + body + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  bad(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

std::vector<std::uint8_t> encode_wav(const Waveform& wave) {
  if (wave.sample_rate <= 0) bad("sample_rate=" + std::to_string(wave.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(wave.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, data_bytes);
  for (double s : wave.samples) put16(out, static_cast<std::uint16_t>(to_pcm16(s)));
  return out;
}

Waveform load_wav(const std::filesystem::path& path) {
  try {
    return decode_wav(read_file(path));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kWavFormat) throw;
    throw Error(ErrorCode::kWavFormat, path.string() + ": " + e.what());
  }
}

void save_wav(const Waveform& wave, const std::filesystem::path& path) {
  write_file_atomic(path, encode_wav(wave));
}

}  // namespace fcnstoi::audio
