#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fcnstoi/dataset.hpp"
#include "fcnstoi/fcn.hpp"
#include "fcnstoi/stoi.hpp"

namespace fcnstoi::eval {

inline constexpr double kSsnrFloorDb = -10.0;
inline constexpr double kSsnrCeilDb = 35.0;

// Mean over non-overlapping frames with nonzero clean energy of the per-frame
// SNR, each clamped to [-10, 35] dB.
double segmental_snr(const Waveform& clean, const Waveform& processed,
                     std::size_t frame_len = 256);

struct MetricsRow {
  std::string utterance_id;
  std::optional<double> snr_db;
  double stoi_noisy = 0.0;
  double stoi_enhanced = 0.0;
  double ssnr_noisy = 0.0;
  double ssnr_enhanced = 0.0;
  double ssnri = 0.0;
  std::string status = "ok";  // otherwise the reason the row has no metrics

  bool ok() const { return status == "ok"; }
};

struct ConditionMeans {
  std::optional<double> snr_db;
  std::size_t count = 0;
  double stoi_noisy = 0.0;
  double stoi_enhanced = 0.0;
  double ssnr_noisy = 0.0;
  double ssnr_enhanced = 0.0;
  double ssnri = 0.0;
};

struct EvaluationReport {
  std::vector<MetricsRow> rows;         // ordered by utterance_id
  std::vector<ConditionMeans> by_snr;   // ascending snr_db, unlabeled rows last
};

// Metrics for one pair; model == nullptr scores the noisy input as the
// enhanced signal.
MetricsRow evaluate_pair(const data::UtterancePair& pair, const fcn::FcnModel* model,
                         const stoi::StoiConfig& cfg = {});

EvaluationReport evaluate_pairs(const std::vector<data::UtterancePair>& pairs,
                                const fcn::FcnModel* model, const stoi::StoiConfig& cfg = {});

// I/O failures become rows with a status message; evaluation continues.
EvaluationReport evaluate_corpus(const std::vector<data::ManifestEntry>& manifest,
                                 const std::filesystem::path& base_dir,
                                 const fcn::FcnModel* model, const stoi::StoiConfig& cfg = {});

std::vector<ConditionMeans> aggregate_by_snr(const std::vector<MetricsRow>& rows);

// Header: utterance_id,snr_db,stoi_noisy,stoi_enh,ssnr_noisy,ssnr_enh,ssnri,status
std::string report_csv(const EvaluationReport& report);
std::string summary_text(const EvaluationReport& report);

}  // namespace fcnstoi::eval
