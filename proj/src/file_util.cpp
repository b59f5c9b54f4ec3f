#include "fcnstoi/file_util.hpp"

#include <fstream>
#include <iterator>

#include "fcnstoi/error.hpp"

namespace fcnstoi {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kTooShortSignal: return "too-short-signal";
    case ErrorCode::kUnsupportedRate: return "unsupported-rate";
    case ErrorCode::kDegenerateReference: return "degenerate-reference";
    case ErrorCode::kUtteranceTooShort: return "utterance-too-short";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kTapeMismatch: return "tape-mismatch";
    case ErrorCode::kNonFiniteGradient: return "non-finite-gradient";
    case ErrorCode::kNonFiniteValue: return "non-finite-value";
    case ErrorCode::kCheckpointFormat: return "checkpoint-format";
    case ErrorCode::kWavFormat: return "wav-format";
    case ErrorCode::kInvalidMix: return "invalid-mix";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot rename to " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fcnstoi
