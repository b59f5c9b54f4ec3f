#include "fcnstoi/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "fcnstoi/error.hpp"

namespace fcnstoi::eval {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

double segmental_snr(const Waveform& clean, const Waveform& processed, std::size_t frame_len) {
  if (clean.size() != processed.size()) {
    throw Error(ErrorCode::kLengthMismatch, "segmental_snr: signals differ in length");
  }
  if (frame_len == 0 || clean.size() < frame_len) {
    throw Error(ErrorCode::kTooShortSignal, "segmental_snr: need at least one full frame");
  }
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  const std::size_t frames = clean.size() / frame_len;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    double signal = 0.0, error = 0.0;
    for (std::size_t n = f * frame_len; n < (f + 1) * frame_len; ++n) {
      const double c = clean.samples[n];
      const double e = c - processed.samples[n];
      signal += c * c;
      error += e * e;
    }
    if (signal == 0.0) continue;
    const double db = 10.0 * std::log10(signal / (error + kEps));
    sum += std::clamp(db, kSsnrFloorDb, kSsnrCeilDb);
    ++used;
  }
  if (used == 0) {
    throw Error(ErrorCode::kDegenerateReference, "segmental_snr: clean signal is all zeros");
  }
  return sum / static_cast<double>(used);
}

MetricsRow evaluate_pair(const data::UtterancePair& pair, const fcn::FcnModel* model,
                         const stoi::StoiConfig& cfg) {
  MetricsRow row;
  row.utterance_id = pair.id;
  row.snr_db = pair.snr_db;
  try {
    const Waveform enhanced =
        model ? fcn::fcn_forward(*model, pair.noisy, fcn::Mode::kInfer).enhanced : pair.noisy;
    row.stoi_noisy = stoi::stoi_score(pair.clean, pair.noisy, cfg);
    row.stoi_enhanced = model ? stoi::stoi_score(pair.clean, enhanced, cfg) : row.stoi_noisy;
    row.ssnr_noisy = segmental_snr(pair.clean, pair.noisy);
    row.ssnr_enhanced = model ? segmental_snr(pair.clean, enhanced) : row.ssnr_noisy;
    row.ssnri = row.ssnr_enhanced - row.ssnr_noisy;
  } catch (const Error& e) {
    row.status = std::string(error_code_name(e.code())) + ": " + e.what();
  }
  return row;
}

std::vector<ConditionMeans> aggregate_by_snr(const std::vector<MetricsRow>& rows) {
  // Unlabeled rows key on +inf so they sort after every real SNR.
  auto key = [](const std::optional<double>& s) { return s ? *s : INFINITY; };
  std::map<double, ConditionMeans> groups;
  for (const auto& r : rows) {
    if (!r.ok()) continue;
    ConditionMeans& g = groups[key(r.snr_db)];
    g.snr_db = r.snr_db;
    ++g.count;
    g.stoi_noisy += r.stoi_noisy;
    g.stoi_enhanced += r.stoi_enhanced;
    g.ssnr_noisy += r.ssnr_noisy;
    g.ssnr_enhanced += r.ssnr_enhanced;
    g.ssnri += r.ssnri;
  }
  std::vector<ConditionMeans> out;
  for (auto& [k, g] : groups) {
    const double n = static_cast<double>(g.count);
    g.stoi_noisy /= n;
    g.stoi_enhanced /= n;
    g.ssnr_noisy /= n;
    g.ssnr_enhanced /= n;
    g.ssnri /= n;
    out.push_back(g);
  }
  return out;
}

EvaluationReport evaluate_pairs(const std::vector<data::UtterancePair>& pairs,
                                const fcn::FcnModel* model, const stoi::StoiConfig& cfg) {
  EvaluationReport report;
  for (const auto& p : pairs) report.rows.push_back(evaluate_pair(p, model, cfg));
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const MetricsRow& a, const MetricsRow& b) {
                     return a.utterance_id < b.utterance_id;
                   });
  report.by_snr = aggregate_by_snr(report.rows);
  return report;
}

EvaluationReport evaluate_corpus(const std::vector<data::ManifestEntry>& manifest,
                                 const std::filesystem::path& base_dir,
                                 const fcn::FcnModel* model, const stoi::StoiConfig& cfg) {
  EvaluationReport report;
  for (const auto& entry : manifest) {
    try {
      report.rows.push_back(evaluate_pair(data::load_pair(entry, base_dir), model, cfg));
    } catch (const Error& e) {
      MetricsRow row;
      row.utterance_id = entry.utterance_id;
      row.snr_db = entry.snr_db;
      row.status = std::string(error_code_name(e.code())) + ": " + e.what();
      report.rows.push_back(std::move(row));
    }
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const MetricsRow& a, const MetricsRow& b) {
                     return a.utterance_id < b.utterance_id;
                   });
  report.by_snr = aggregate_by_snr(report.rows);
  return report;
}

std::string report_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out << "utterance_id,snr_db,stoi_noisy,stoi_enh,ssnr_noisy,ssnr_enh,ssnri,status\n";
  for (const auto& r : report.rows) {
    out << csv_field(r.utterance_id) << ',' << (r.snr_db ? fmt(*r.snr_db) : "") << ',';
    if (r.ok()) {
      out << fmt(r.stoi_noisy) << ',' << fmt(r.stoi_enhanced) << ',' << fmt(r.ssnr_noisy) << ','
          << fmt(r.ssnr_enhanced) << ',' << fmt(r.ssnri);
    } else {
      out << ",,,,";
    }
    out << ',' << csv_field(r.status) << '\n';
  }
  return out.str();
}

std::string summary_text(const EvaluationReport& report) {
  std::ostringstream out;
  out << "snr_db   n   stoi_noisy  stoi_enh  ssnr_noisy  ssnr_enh  ssnri\n";
  for (const auto& g : report.by_snr) {
    char line[160];
    std::snprintf(line, sizeof line, "%-7s %3zu  %9.4f  %8.4f  %10.3f  %8.3f  %6.3f\n",
                  g.snr_db ? fmt(*g.snr_db).substr(0, 6).c_str() : "n/a", g.count, g.stoi_noisy,
                  g.stoi_enhanced, g.ssnr_noisy, g.ssnr_enhanced, g.ssnri);
    out << line;
  }
  return out.str();
}

}  // namespace fcnstoi::eval
