#include "fcnstoi/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "fcnstoi/error.hpp"

namespace fcnstoi::train {
namespace {

using nlohmann::json;

bool is_skippable(ErrorCode code) {
  return code == ErrorCode::kDegenerateReference || code == ErrorCode::kUtteranceTooShort ||
         code == ErrorCode::kTooShortSignal;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::kInvalidArgument, "train: epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::kInvalidArgument, "train: learning rate must be finite and >= 0");
  }
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "train: batch size must be >= 1");
  loss.validate();
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig cfg;
  try {
    const json j = json::parse(text);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.shuffle = j.value("shuffle", cfg.shuffle);
    cfg.patience = j.value("patience", cfg.patience);
    if (j.contains("validation_manifest") && !j["validation_manifest"].is_null()) {
      cfg.validation_manifest = j["validation_manifest"].get<std::string>();
    }
    if (j.contains("loss")) {
      const json& l = j["loss"];
      if (l.contains("kind")) cfg.loss.kind = losses::parse_loss_kind(l["kind"].get<std::string>());
      cfg.loss.alpha = l.value("alpha", cfg.loss.alpha);
      if (l.contains("stoi")) {
        const json& s = l["stoi"];
        auto& c = cfg.loss.stoi;
        c.analysis_rate = s.value("analysis_rate", c.analysis_rate);
        c.frame_len = s.value("frame_len", c.frame_len);
        c.hop = s.value("hop", c.hop);
        c.nfft = s.value("nfft", c.nfft);
        c.n_bands = s.value("n_bands", c.n_bands);
        c.lowest_cf = s.value("lowest_cf", c.lowest_cf);
        c.segment_len = s.value("segment_len", c.segment_len);
        c.dyn_range_db = s.value("dyn_range_db", c.dyn_range_db);
        c.clip_beta_db = s.value("clip_beta_db", c.clip_beta_db);
        c.eps = s.value("eps", c.eps);
      }
      if (l.contains("silent")) {
        const json& s = l["silent"];
        cfg.loss.silent.frame_len = s.value("frame_len", cfg.loss.silent.frame_len);
        cfg.loss.silent.hop = s.value("hop", cfg.loss.silent.hop);
        cfg.loss.silent.dyn_range_db = s.value("dyn_range_db", cfg.loss.silent.dyn_range_db);
      }
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      cfg.model.hidden_layers = m.value("hidden_layers", cfg.model.hidden_layers);
      cfg.model.filters = m.value("filters", cfg.model.filters);
      cfg.model.kernel_len = m.value("kernel_len", cfg.model.kernel_len);
      cfg.model.with_norm = m.value("with_norm", cfg.model.with_norm);
      cfg.model.slope = m.value("slope", cfg.model.slope);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("train config: ") + e.what());
  }
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  const auto& s = cfg.loss.stoi;
  json j = {
      {"epochs", cfg.epochs},
      {"learning_rate", cfg.learning_rate},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"shuffle", cfg.shuffle},
      {"patience", cfg.patience},
      {"validation_manifest",
       cfg.validation_manifest ? json(*cfg.validation_manifest) : json(nullptr)},
      {"loss",
       {{"kind", losses::loss_kind_name(cfg.loss.kind)},
        {"alpha", cfg.loss.alpha},
        {"stoi",
         {{"analysis_rate", s.analysis_rate},
          {"frame_len", s.frame_len},
          {"hop", s.hop},
          {"nfft", s.nfft},
          {"n_bands", s.n_bands},
          {"lowest_cf", s.lowest_cf},
          {"segment_len", s.segment_len},
          {"dyn_range_db", s.dyn_range_db},
          {"clip_beta_db", s.clip_beta_db},
          {"eps", s.eps}}},
        {"silent",
         {{"frame_len", cfg.loss.silent.frame_len},
          {"hop", cfg.loss.silent.hop},
          {"dyn_range_db", cfg.loss.silent.dyn_range_db}}}}},
      {"model",
       {{"hidden_layers", cfg.model.hidden_layers},
        {"filters", cfg.model.filters},
        {"kernel_len", cfg.model.kernel_len},
        {"with_norm", cfg.model.with_norm},
        {"slope", cfg.model.slope}}},
  };
  return j.dump(2);
}

UtteranceGradient utterance_gradient(const fcn::FcnModel& model, const data::UtterancePair& pair,
                                     const losses::LossSpec& spec) {
  fcn::ForwardResult fwd = fcn::fcn_forward(model, pair.noisy, fcn::Mode::kTrain);
  UtteranceGradient out;
  out.loss = losses::evaluate_loss(spec, pair.clean, fwd.enhanced);
  if (!std::isfinite(out.loss.value)) {
    throw Error(ErrorCode::kNonFiniteValue, "utterance " + pair.id + ": loss is not finite");
  }
  for (double g : out.loss.cotangent) {
    if (!std::isfinite(g)) {
      throw Error(ErrorCode::kNonFiniteGradient,
                  "utterance " + pair.id + ": loss gradient is not finite");
    }
  }
  out.grads = fcn::fcn_backward(model, fwd.tape, out.loss.cotangent);
  out.tape = std::move(fwd.tape);
  return out;
}

double utterance_loss(const fcn::FcnModel& model, const data::UtterancePair& pair,
                      const losses::LossSpec& spec) {
  const auto fwd = fcn::fcn_forward(model, pair.noisy, fcn::Mode::kTrain);
  return losses::evaluate_loss(spec, pair.clean, fwd.enhanced).value;
}

std::optional<double> mean_loss(const fcn::FcnModel& model,
                                const std::vector<data::UtterancePair>& data,
                                const losses::LossSpec& spec) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& pair : data) {
    try {
      const auto out = fcn::fcn_forward(model, pair.noisy, fcn::Mode::kInfer);
      const double v = losses::evaluate_loss(spec, pair.clean, out.enhanced).value;
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonFiniteValue, "utterance " + pair.id + ": loss is not finite");
      }
      sum += v;
      ++n;
    } catch (const Error& e) {
      if (!is_skippable(e.code())) throw;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

TrainResult train(fcn::FcnModel model, const std::vector<data::UtterancePair>& data,
                  const TrainConfig& cfg, const std::vector<data::UtterancePair>* validation,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  model.validate();
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "train: empty training set");

  const bool frozen = cfg.learning_rate == 0.0;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  fcn::AdamState adam;
  TrainResult result;
  std::optional<double> best_val;
  fcn::FcnModel best_model = model;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (cfg.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    fcn::Gradients accum = fcn::Gradients::zeros_like(model);
    std::size_t in_batch = 0;

    auto flush = [&]() {
      if (in_batch > 0 && !frozen) {
        accum.scale(1.0 / static_cast<double>(in_batch));
        fcn::adam_step(model, accum, adam, cfg.learning_rate);
      }
      accum = fcn::Gradients::zeros_like(model);
      in_batch = 0;
    };

    for (std::size_t idx : order) {
      const data::UtterancePair& pair = data[idx];
      try {
        UtteranceGradient ug = utterance_gradient(model, pair, cfg.loss);
        accum.add_scaled(ug.grads, 1.0);
        loss_sum += ug.loss.value;
        ++stats.processed;
        ++in_batch;
        // Batch statistics fold into the running averages once the
        // gradient for this utterance has been taken.
        if (!frozen) fcn::commit_running_stats(model, ug.tape);
      } catch (const Error& e) {
        if (!is_skippable(e.code())) throw;
        ++stats.skipped;
        stats.skips.push_back({pair.id, std::string(error_code_name(e.code())) + ": " + e.what()});
      }
      if (in_batch == cfg.batch_size) flush();
    }
    flush();

    if (stats.processed == 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "train: every utterance was skipped in epoch " + std::to_string(epoch) +
                      (stats.skips.empty() ? "" : " (first: " + stats.skips.front().reason + ")"));
    }
    stats.train_loss = loss_sum / static_cast<double>(stats.processed);
    if (validation && !validation->empty()) stats.val_loss = mean_loss(model, *validation, cfg.loss);
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.val_loss) {
      if (!best_val || *stats.val_loss < *best_val) {
        best_val = stats.val_loss;
        best_model = model;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  result.model = best_val ? std::move(best_model) : std::move(model);
  return result;
}

TrainResult train(fcn::FcnModel model, const std::vector<data::ManifestEntry>& manifest,
                  const std::filesystem::path& base_dir, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (manifest.empty()) throw Error(ErrorCode::kInvalidArgument, "train: empty manifest");
  std::vector<data::UtterancePair> pairs;
  pairs.reserve(manifest.size());
  for (const auto& e : manifest) pairs.push_back(data::load_pair(e, base_dir));

  std::vector<data::UtterancePair> val;
  if (cfg.validation_manifest) {
    const std::filesystem::path vpath(*cfg.validation_manifest);
    for (const auto& e : data::read_manifest(vpath)) {
      val.push_back(data::load_pair(e, vpath.parent_path()));
    }
  }
  return train(std::move(model), pairs, cfg, val.empty() ? nullptr : &val, on_epoch);
}

std::string history_csv(const std::vector<EpochStats>& history, bool record_time) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,seconds,skipped\n";
  for (const auto& s : history) {
    out << s.epoch << ',' << fmt(s.train_loss) << ',' << (s.val_loss ? fmt(*s.val_loss) : "")
        << ',' << (record_time ? fmt(s.seconds) : "0") << ',' << s.skipped << '\n';
  }
  return out.str();
}

}  // namespace fcnstoi::train
