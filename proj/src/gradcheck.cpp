#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fcnstoi/synth.hpp"
#include "fcnstoi/trainer.hpp"

namespace fcnstoi::train {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

double gradcheck_threshold(losses::LossKind kind) {
  return kind == losses::LossKind::kMse ? 1e-5 : 1e-4;
}

GradcheckReport gradcheck_report(losses::LossKind kind, std::uint64_t seed,
                                 const GradcheckOptions& options) {
  fcn::ModelConfig mc;
  mc.hidden_layers = 2;
  mc.filters = 4;
  mc.kernel_len = 7;
  fcn::FcnModel model = fcn::init_model(mc, seed);

  data::UtterancePair pair;
  pair.id = "gradcheck";
  pair.clean = synth::speech_like(options.seconds, options.sample_rate, seed);
  const Waveform noise =
      synth::noise(synth::NoiseType::kWhite, pair.clean.size(), options.sample_rate, seed + 1);
  pair.noisy = data::mix_at_snr(pair.clean, noise, 0.0, seed).mixture;

  losses::LossSpec spec;
  spec.kind = kind;

  const UtteranceGradient ug = utterance_gradient(model, pair, spec);
  const std::vector<double> analytic = ug.grads.flatten();
  std::vector<double> params = fcn::flatten_parameters(model);
  double largest = 0.0;
  for (double g : analytic) largest = std::max(largest, std::abs(g));
  const double floor = std::max(options.scale_floor * largest, 1e-10);

  std::vector<std::size_t> indices(params.size());
  std::iota(indices.begin(), indices.end(), 0);
  if (options.sample_count > 0 && options.sample_count < indices.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(options.sample_count);
    std::sort(indices.begin(), indices.end());
  }

  GradcheckReport report;
  fcn::FcnModel probe = model;
  for (std::size_t i : indices) {
    const double saved = params[i];
    params[i] = saved + options.step;
    fcn::assign_parameters(probe, params);
    const double up = utterance_loss(probe, pair, spec);
    params[i] = saved - options.step;
    fcn::assign_parameters(probe, params);
    const double down = utterance_loss(probe, pair, spec);
    params[i] = saved;

    const double numeric = (up - down) / (2.0 * options.step);
    const double err = relative_error(analytic[i], numeric, floor);
    ++report.checked;
    if (err > report.max_relative_error || report.checked == 1) {
      report.max_relative_error = err;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

double gradcheck(losses::LossKind kind, std::uint64_t seed) {
  return gradcheck_report(kind, seed).max_relative_error;
}

}  // namespace fcnstoi::train
