#include "fcnstoi/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "fcnstoi/dataset.hpp"
#include "fcnstoi/error.hpp"
#include "fcnstoi/evaluate.hpp"
#include "fcnstoi/fcn.hpp"
#include "fcnstoi/file_util.hpp"
#include "fcnstoi/trainer.hpp"
#include "fcnstoi/wav.hpp"

namespace fcnstoi::cli {
namespace {

namespace fs = std::filesystem;

// Thrown for bad flag values detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<fs::path> wav_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (e.is_regular_file() && ext == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorCode::kIo, "no .wav files in " + dir.string());
  return out;
}

std::string manifest_path_for(const fs::path& file, const fs::path& manifest_dir) {
  std::error_code ec;
  const fs::path rel = fs::relative(fs::absolute(file), fs::absolute(manifest_dir), ec);
  return (ec || rel.empty()) ? fs::absolute(file).string() : rel.generic_string();
}

std::string snr_tag(double snr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%gdB", snr);
  return buf;
}

std::vector<double> parse_snrs(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--snrs: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--snrs: empty list");
  return out;
}

fcn::ModelConfig parse_model_config(const std::string& text, double slope) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long x = std::stol(item, &used);
      if (used != item.size() || x < 0) throw std::invalid_argument(item);
      v.push_back(static_cast<std::size_t>(x));
    } catch (const std::exception&) {
      throw UsageError("--model-config: cannot parse '" + item + "'");
    }
  }
  if (v.size() != 3) throw UsageError("--model-config expects K,F,kernel");
  if (v[2] % 2 == 0) throw UsageError("--model-config: kernel length must be odd");
  if (v[0] > 0 && v[1] == 0) throw UsageError("--model-config: F must be >= 1");
  fcn::ModelConfig mc;
  mc.hidden_layers = v[0];
  mc.filters = v[1];
  mc.kernel_len = v[2];
  mc.slope = slope;
  return mc;
}

struct MixArgs {
  std::string clean_dir, noise_dir, snrs = "-6,-3,0,3,6,9", out, split = "train";
  std::uint64_t seed = 0;
};

int do_mix(const MixArgs& a, std::ostream& out) {
  const auto snrs = parse_snrs(a.snrs);
  const auto cleans = wav_files(a.clean_dir);
  const auto noises = wav_files(a.noise_dir);
  const fs::path manifest_dir = fs::path(a.out).parent_path().empty()
                                    ? fs::path(".")
                                    : fs::path(a.out).parent_path();
  std::vector<data::ManifestEntry> entries;
  std::uint64_t index = 0;
  for (const auto& c : cleans) {
    for (const auto& n : noises) {
      for (double snr : snrs) {
        data::ManifestEntry e;
        e.utterance_id = c.stem().string() + "_" + n.stem().string() + "_" + snr_tag(snr);
        e.clean_path = manifest_path_for(c, manifest_dir);
        e.noise_path = manifest_path_for(n, manifest_dir);
        e.snr_db = snr;
        e.mix_seed = splitmix64(a.seed ^ splitmix64(index++));
        e.split = a.split;
        entries.push_back(std::move(e));
      }
    }
  }
  data::write_manifest(entries, a.out);
  out << "wrote " << entries.size() << " entries to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string manifest, loss = "stoi", model_config = "7,30,55", out = "model.fcnw", history;
  std::string config, validation, init;
  double alpha = 100.0, lr = 1e-3, slope = fcn::kDefaultSlope;
  long long epochs = 1, batch = 1, patience = 10;
  std::uint64_t seed = 0;
  bool no_shuffle = false, record_time = false, quiet = false;
};

int do_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  train::TrainConfig cfg;
  if (!a.config.empty()) {
    const auto bytes = read_file(a.config);
    cfg = train::train_config_from_json(std::string(bytes.begin(), bytes.end()));
  }
  auto given = [&](const char* flag) { return sub.count(flag) > 0 || a.config.empty(); };
  if (given("--epochs")) {
    if (a.epochs < 1) throw UsageError("--epochs must be >= 1");
    cfg.epochs = static_cast<std::size_t>(a.epochs);
  }
  if (given("--batch")) {
    if (a.batch < 1) throw UsageError("--batch must be >= 1");
    cfg.batch_size = static_cast<std::size_t>(a.batch);
  }
  if (given("--patience")) {
    if (a.patience < 1) throw UsageError("--patience must be >= 1");
    cfg.patience = static_cast<std::size_t>(a.patience);
  }
  if (given("--lr")) {
    if (!(a.lr > 0.0)) throw UsageError("--lr must be > 0");
    cfg.learning_rate = a.lr;
  }
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--alpha")) cfg.loss.alpha = a.alpha;
  if (given("--loss")) {
    try {
      cfg.loss.kind = losses::parse_loss_kind(a.loss);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (given("--model-config") || given("--slope")) {
    cfg.model = parse_model_config(a.model_config, a.slope);
  }
  if (sub.count("--no-shuffle") > 0) cfg.shuffle = false;
  if (sub.count("--validation") > 0) cfg.validation_manifest = a.validation;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (a.manifest.empty()) throw UsageError("--manifest is required");

  const auto manifest = data::read_manifest(a.manifest);
  fcn::FcnModel model = a.init.empty() ? fcn::init_model(cfg.model, cfg.seed)
                                       : fcn::load_checkpoint(a.init);
  auto on_epoch = [&](const train::EpochStats& s) {
    if (a.quiet) return;
    out << "epoch " << s.epoch << " train_loss " << s.train_loss;
    if (s.val_loss) out << " val_loss " << *s.val_loss;
    out << " processed " << s.processed << " skipped " << s.skipped << "\n";
  };
  const train::TrainResult result =
      train::train(std::move(model), manifest, fs::path(a.manifest).parent_path(), cfg, on_epoch);
  for (const auto& skip : result.history.back().skips) {
    out << "skipped " << skip.utterance_id << ": " << skip.reason << "\n";
  }
  fcn::save_checkpoint(result.model, a.out);
  if (!a.history.empty()) {
    write_file_atomic(a.history, train::history_csv(result.history, a.record_time));
  }
  if (result.stopped_early) out << "early stop after epoch " << result.history.back().epoch << "\n";
  out << "saved " << a.out << "\n";
  return kExitOk;
}

int do_enhance(const std::string& model_path, const std::string& in, const std::string& dst,
               std::ostream& out) {
  const fcn::FcnModel model = fcn::load_checkpoint(model_path);
  const Waveform noisy = audio::load_wav(in);
  const Waveform enhanced = fcn::fcn_forward(model, noisy, fcn::Mode::kInfer).enhanced;
  audio::save_wav(enhanced, dst);
  out << "wrote " << enhanced.size() << " samples to " << dst << "\n";
  return kExitOk;
}

int do_eval(const std::string& manifest_path, const std::string& model_path,
            const std::string& dst, std::ostream& out) {
  const auto manifest = data::read_manifest(manifest_path);
  std::optional<fcn::FcnModel> model;
  if (!model_path.empty()) model = fcn::load_checkpoint(model_path);
  const auto report = eval::evaluate_corpus(manifest, fs::path(manifest_path).parent_path(),
                                            model ? &*model : nullptr);
  write_file_atomic(dst, eval::report_csv(report));
  out << eval::summary_text(report);
  std::size_t failed = 0;
  for (const auto& r : report.rows) failed += r.ok() ? 0 : 1;
  if (failed > 0) out << failed << " of " << report.rows.size() << " rows have no metrics\n";
  return kExitOk;
}

int do_gradcheck(const std::string& loss, std::uint64_t seed, std::ostream& out) {
  losses::LossKind kind;
  try {
    kind = losses::parse_loss_kind(loss);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto report = train::gradcheck_report(kind, seed);
  const double threshold = train::gradcheck_threshold(kind);
  char line[200];
  std::snprintf(line, sizeof line, "max_relative_error %.3e over %zu parameters (threshold %.0e)\n",
                report.max_relative_error, report.checked, threshold);
  out << line;
  return report.max_relative_error < threshold ? kExitOk : kExitData;
}

int do_filters(const std::string& model_path, long long nfft, double rate, const std::string& dst,
               std::ostream& out) {
  if (nfft <= 0) throw UsageError("--nfft must be positive");
  const fcn::FcnModel model = fcn::load_checkpoint(model_path);
  const auto resp =
      fcn::first_layer_frequency_response(model, static_cast<std::size_t>(nfft), rate);
  std::ostringstream csv;
  char buf[64];
  csv << "filter";
  for (double f : resp.freqs_hz) {
    std::snprintf(buf, sizeof buf, ",%.3f", f);
    csv << buf;
  }
  csv << "\n";
  for (std::size_t r = 0; r < resp.magnitude.rows(); ++r) {
    csv << r;
    for (double m : resp.magnitude.row(r)) {
      std::snprintf(buf, sizeof buf, ",%.9g", m);
      csv << buf;
    }
    csv << "\n";
  }
  std::snprintf(buf, sizeof buf, "%.6f", resp.high_band_ratio);
  csv << "high_band_ratio," << buf << "\n";
  write_file_atomic(dst, csv.str());
  out << "high_band_ratio " << buf << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train and evaluate intelligibility-optimized waveform enhancement models",
               "fcnstoi"};
  app.require_subcommand(1);

  MixArgs mix;
  auto* mix_cmd = app.add_subcommand("mix", "Build a JSON-lines manifest mixing clean and noise");
  mix_cmd->add_option("--clean-dir", mix.clean_dir, "Folder of clean .wav files")->required();
  mix_cmd->add_option("--noise-dir", mix.noise_dir, "Folder of noise .wav files")->required();
  mix_cmd->add_option("--snrs", mix.snrs, "Comma-separated SNR grid in dB");
  mix_cmd->add_option("--seed", mix.seed, "Seed for noise crop offsets");
  mix_cmd->add_option("--split", mix.split, "Split tag written to every entry");
  mix_cmd->add_option("--out", mix.out, "Manifest path")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--manifest", tr.manifest, "Training manifest (JSON lines)");
  train_cmd->add_option("--config", tr.config, "Training config JSON; flags override it");
  train_cmd->add_option("--loss", tr.loss, "mse | stoi | mse+stoi | conditional");
  train_cmd->add_option("--alpha", tr.alpha, "MSE weight for combined losses");
  train_cmd->add_option("--epochs", tr.epochs, "Number of epochs");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--batch", tr.batch, "Utterances averaged per update");
  train_cmd->add_option("--seed", tr.seed, "Seed for initialization and shuffling");
  train_cmd->add_option("--model-config", tr.model_config, "K,F,kernel");
  train_cmd->add_option("--slope", tr.slope, "LeakyReLU negative slope");
  train_cmd->add_option("--validation", tr.validation, "Validation manifest for early stopping");
  train_cmd->add_option("--patience", tr.patience, "Early-stopping patience in epochs");
  train_cmd->add_option("--init", tr.init, "Start from this checkpoint instead of a fresh model");
  train_cmd->add_flag("--no-shuffle", tr.no_shuffle, "Keep manifest order every epoch");
  train_cmd->add_flag("--record-time", tr.record_time, "Write wall time into the history CSV");
  train_cmd->add_flag("--quiet", tr.quiet, "Do not print per-epoch progress");
  train_cmd->add_option("--out", tr.out, "Checkpoint path");
  train_cmd->add_option("--history", tr.history, "History CSV path");

  std::string enh_model, enh_in, enh_out;
  auto* enh_cmd = app.add_subcommand("enhance", "Enhance one wav file");
  enh_cmd->add_option("--model", enh_model, "Checkpoint")->required();
  enh_cmd->add_option("--in", enh_in, "Noisy wav")->required();
  enh_cmd->add_option("--out", enh_out, "Output wav")->required();

  std::string ev_manifest, ev_model, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "Score a manifest (STOI, segmental SNR, SSNRI)");
  eval_cmd->add_option("--manifest", ev_manifest, "Manifest")->required();
  eval_cmd->add_option("--model", ev_model, "Checkpoint; omit to score the noisy input");
  eval_cmd->add_option("--out", ev_out, "Report CSV")->required();

  std::string gc_loss = "mse";
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradient");
  gc_cmd->add_option("--loss", gc_loss, "mse | stoi | mse+stoi | conditional");
  gc_cmd->add_option("--seed", gc_seed, "Seed");

  std::string f_model, f_out;
  long long f_nfft = 512;
  double f_rate = 16000.0;
  auto* f_cmd = app.add_subcommand("filters", "First-layer filter magnitude responses");
  f_cmd->add_option("--model", f_model, "Checkpoint")->required();
  f_cmd->add_option("--nfft", f_nfft, "Transform length");
  f_cmd->add_option("--rate", f_rate, "Sample rate the model runs at (Hz)");
  f_cmd->add_option("--out", f_out, "Response CSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "fcnstoi: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*mix_cmd) return do_mix(mix, out);
    if (*train_cmd) return do_train(tr, *train_cmd, out);
    if (*enh_cmd) return do_enhance(enh_model, enh_in, enh_out, out);
    if (*eval_cmd) return do_eval(ev_manifest, ev_model, ev_out, out);
    if (*gc_cmd) return do_gradcheck(gc_loss, gc_seed, out);
    if (*f_cmd) return do_filters(f_model, f_nfft, f_rate, f_out, out);
  } catch (const UsageError& e) {
    err << "fcnstoi " << name << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "fcnstoi " << name << ": [" << error_code_name(e.code()) << "] " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "fcnstoi " << name << ": " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace fcnstoi::cli
