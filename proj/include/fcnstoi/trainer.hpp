#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fcnstoi/dataset.hpp"
#include "fcnstoi/fcn.hpp"
#include "fcnstoi/losses.hpp"

namespace fcnstoi::train {

struct TrainConfig {
  std::size_t epochs = 1;
  double learning_rate = 1e-3;  // 0 freezes the model entirely
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  losses::LossSpec loss;
  fcn::ModelConfig model;
  bool shuffle = true;
  std::optional<std::string> validation_manifest;
  std::size_t patience = 10;

  void validate() const;
};

// JSON object mirroring TrainConfig; missing keys keep their defaults.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

struct SkipRecord {
  std::string utterance_id;
  std::string reason;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double seconds = 0.0;
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::vector<SkipRecord> skips;
};

struct TrainResult {
  fcn::FcnModel model;
  std::vector<EpochStats> history;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Each utterance is enhanced whole; the gradients of B consecutive
// utterances are averaged before one Adam step. Utterances that fail a loss
// precondition are skipped and counted. With validation data the model with
// the lowest validation loss is returned and training stops after `patience`
// epochs without improvement.
TrainResult train(fcn::FcnModel model, const std::vector<data::UtterancePair>& data,
                  const TrainConfig& cfg,
                  const std::vector<data::UtterancePair>* validation = nullptr,
                  const EpochCallback& on_epoch = {});

TrainResult train(fcn::FcnModel model, const std::vector<data::ManifestEntry>& manifest,
                  const std::filesystem::path& base_dir, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Mean loss over the utterances that satisfy the loss preconditions (infer
// mode); nullopt when none do.
std::optional<double> mean_loss(const fcn::FcnModel& model,
                                const std::vector<data::UtterancePair>& data,
                                const losses::LossSpec& spec);

// Columns: epoch,train_loss,val_loss,seconds,skipped. With record_time false
// the seconds column is written as 0 so identical runs produce identical files.
std::string history_csv(const std::vector<EpochStats>& history, bool record_time);

// End-to-end loss value and parameter gradient of one utterance (train-mode
// forward). Used by the trainer and by the gradient checker.
struct UtteranceGradient {
  losses::LossValue loss;
  fcn::Gradients grads;
  fcn::ForwardTape tape;
};
UtteranceGradient utterance_gradient(const fcn::FcnModel& model, const data::UtterancePair& pair,
                                     const losses::LossSpec& spec);
double utterance_loss(const fcn::FcnModel& model, const data::UtterancePair& pair,
                      const losses::LossSpec& spec);

struct GradcheckOptions {
  std::size_t sample_count = 64;  // parameters probed; 0 = all
  double step = 3e-7;
  // Components below scale_floor * max|analytic| are compared on that
  // absolute scale.
  double scale_floor = 1e-3;
  int sample_rate = 16000;
  double seconds = 1.0;
};

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, floor) with a tiny absolute floor.
double relative_error(double analytic, double numeric, double floor = 1e-10);

// Small model (K=2, F=4, kernel 7) on a seeded clean/noisy pair; compares
// analytic parameter gradients with central differences.
GradcheckReport gradcheck_report(losses::LossKind kind, std::uint64_t seed,
                                 const GradcheckOptions& options = {});
double gradcheck(losses::LossKind kind, std::uint64_t seed);

// Pass thresholds for gradcheck per loss kind.
double gradcheck_threshold(losses::LossKind kind);

}  // namespace fcnstoi::train
