#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

#include "fcnstoi/error.hpp"
#include "fcnstoi/fcn.hpp"
#include "fcnstoi/trainer.hpp"
#include "support.hpp"

using namespace fcnstoi;
using namespace fcnstoi::fcn;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an fcnstoi::Error");
  return ErrorCode::kIo;
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

Matrix row_matrix(const std::vector<double>& v) {
  Matrix m(1, v.size());
  m.data() = v;
  return m;
}

ModelConfig small_config() {
  ModelConfig mc;
  mc.hidden_layers = 2;
  mc.filters = 4;
  mc.kernel_len = 7;
  return mc;
}

double weighted_output(const FcnModel& model, const Waveform& x, const std::vector<double>& c) {
  return testing::dot(fcn_forward(model, x, Mode::kTrain).enhanced.samples, c);
}

}  // namespace

TEST_CASE("same-padded cross-correlation") {
  ConvLayer delta = make_conv(1, 1, 5, Activation::kLinear);
  delta.kernels[2] = 1.0;
  const auto x = testing::randn(37, 1);
  CHECK(conv1d_same(row_matrix(x), delta).data() == x);

  ConvLayer diff = make_conv(1, 1, 3, Activation::kLinear);
  diff.kernels = {1.0, 0.0, -1.0};
  CHECK(conv1d_same(row_matrix({1.0, 2.0, 3.0}), diff).data() == std::vector<double>{-2.0, -2.0, 2.0});

  ConvLayer wide = make_conv(1, 2, 55, Activation::kLinear);
  wide.kernels = testing::randn(110, 2);
  wide.bias = {0.5, -0.25};
  for (std::size_t len : {1u, 2u, 27u, 1000u, 100000u}) {
    const Matrix out = conv1d_same(row_matrix(testing::randn(len, len)), wide);
    CHECK(out.rows() == 2);
    CHECK(out.cols() == len);
  }

  // Direct sum over the zero-padded signal, with bias and two input channels.
  ConvLayer two = make_conv(2, 1, 3, Activation::kLinear);
  two.kernels = {1.0, 2.0, 3.0, -1.0, 0.5, 4.0};
  two.bias = {0.25};
  Matrix in(2, 4);
  in.data() = {1, 2, 3, 4, 5, 6, 7, 8};
  const Matrix out = conv1d_same(in, two);
  for (std::size_t t = 0; t < 4; ++t) {
    double acc = 0.25;
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t k = 0; k < 3; ++k) {
        const long s = static_cast<long>(t + k) - 1;
        if (s >= 0 && s < 4) acc += two.weight(0, i, k) * in(i, s);
      }
    }
    CHECK(out(0, t) == doctest::Approx(acc).epsilon(1e-15));
  }
  CHECK(code_of([&] { conv1d_same(row_matrix({1.0, 2.0}), two); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("activations") {
  CHECK(activate(-2.0, Activation::kLeakyRelu, 0.3) == doctest::Approx(-0.6));
  CHECK(activate(2.0, Activation::kLeakyRelu, 0.3) == 2.0);
  CHECK(activate(0.0, Activation::kTanh, 0.3) == 0.0);
  CHECK(activate(-4.0, Activation::kLinear, 0.3) == -4.0);
  for (double x : {-1e300, -50.0, -20.0, -1.0, 1.0, 20.0, 50.0, 1e300}) {
    const double y = activate(x, Activation::kTanh, 0.3);
    CHECK(y > -1.0);
    CHECK(y < 1.0);
  }
  const auto v = activation(std::vector<double>{-1.0, 0.5}, Activation::kLeakyRelu, 0.5);
  CHECK(v == std::vector<double>{-0.5, 0.5});
}

TEST_CASE("normalization") {
  NormLayer norm = make_norm(2);
  norm.gamma = {1.5, 0.5};
  norm.beta = {0.25, -2.0};
  Matrix x(2, 500);
  const auto r = testing::randn(1000, 3, 5.0);
  for (std::size_t i = 0; i < 1000; ++i) x.data()[i] = r[i] + (i < 500 ? 3.0 : -7.0);
  const Matrix y = normalize(x, norm, Mode::kTrain);
  for (std::size_t c = 0; c < 2; ++c) {
    double mu = 0.0, var = 0.0;
    for (double v : y.row(c)) mu += v / 500.0;
    for (double v : y.row(c)) var += (v - mu) * (v - mu) / 500.0;
    CHECK(std::abs(mu - norm.beta[c]) < 1e-6);
    CHECK(std::abs(var - norm.gamma[c] * norm.gamma[c]) < 1e-6);
  }

  NormLayer plain = make_norm(1);
  const Matrix flat(1, 50, 3.0);
  const Matrix flat_out = normalize(flat, plain, Mode::kTrain);
  for (double v : flat_out.data()) CHECK(std::abs(v) < 1e-9);

  const Matrix z = row_matrix(testing::randn(64, 4));
  const Matrix id = normalize(z, plain, Mode::kInfer);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(id.data()[i] - z.data()[i]) < 1e-9);

  // Running statistics move by (1 - momentum) toward the batch statistics.
  NormLayer running = make_norm(1);
  NormStats stats;
  normalize(z, running, Mode::kTrain, &stats);
  const Matrix again = norm_forward(z, running, Mode::kTrain);
  (void)again;
  const double keep = running.momentum;
  CHECK(keep == doctest::Approx(0.99).epsilon(1e-7));
  CHECK(running.running_mean[0] == doctest::Approx((1.0 - keep) * stats.mean[0]).epsilon(1e-12));
  CHECK(running.running_var[0] == doctest::Approx(keep + (1.0 - keep) * stats.var[0]).epsilon(1e-12));

  CHECK(code_of([&] { normalize(row_matrix({1.0}), plain, Mode::kTrain); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("forward pass shape, range and determinism") {
  const FcnModel small = init_model(small_config(), 3);
  for (std::size_t len : {400u, 5000u, 80000u}) {
    Waveform x{testing::randn(len, len, 0.3), 16000};
    const auto out = fcn_forward(small, x, Mode::kInfer);
    CHECK(out.enhanced.size() == len);
    CHECK(out.enhanced.sample_rate == 16000);
    CHECK(out.tape.empty());
    for (double v : out.enhanced.samples) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
  const FcnModel full = init_model(ModelConfig{}, 1);
  Waveform loud{testing::randn(400, 9, 100.0), 16000};
  const auto a = fcn_forward(full, loud, Mode::kTrain);
  const auto b = fcn_forward(full, loud, Mode::kTrain);
  CHECK(a.enhanced.size() == 400);
  CHECK(a.enhanced == b.enhanced);
  CHECK(!a.tape.empty());
  for (double v : a.enhanced.samples) CHECK(std::abs(v) < 1.0);
  for (std::size_t len : {1u, 2u, 3u}) {
    CHECK(fcn_forward(small, Waveform{std::vector<double>(len, 0.1), 16000}, Mode::kInfer).enhanced.size() == len);
  }
  CHECK(code_of([&] { fcn_forward(small, Waveform{}, Mode::kInfer); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("degenerate single-hidden-layer model reduces to tanh") {
  const auto x = testing::randn(300, 5, 0.7);
  double mu = 0.0, var = 0.0;
  for (double v : x) mu += v / 300.0;
  for (double v : x) var += (v - mu) * (v - mu) / 300.0;

  FcnModel m;
  Layer hidden{make_conv(1, 1, 3, Activation::kLeakyRelu), make_norm(1)};
  hidden.conv.kernels = {0.0, 1.0, 0.0};
  hidden.norm->gamma = {std::sqrt(var + kNormEpsilon)};
  hidden.norm->beta = {mu + 10.0};
  Layer out{make_conv(1, 1, 3, Activation::kTanh), std::nullopt};
  out.conv.kernels = {0.0, 1.0, 0.0};
  out.conv.bias = {-10.0};
  m.layers = {hidden, out};
  const auto y = fcn_forward(m, Waveform{x, 16000}, Mode::kTrain).enhanced.samples;
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - std::tanh(x[i])) < 1e-9);
}

TEST_CASE("backward pass") {
  const FcnModel model = init_model(small_config(), 11);
  const Waveform x{testing::randn(200, 12, 0.5), 16000};
  const auto fwd = fcn_forward(model, x, Mode::kTrain);

  SUBCASE("zero cotangent gives zero gradients") {
    const Gradients g = fcn_backward(model, fwd.tape, std::vector<double>(200, 0.0));
    for (double v : g.flatten()) CHECK(v == 0.0);
    for (double v : g.input_cotangent) CHECK(v == 0.0);
  }

  SUBCASE("every parameter and the input agree with central differences") {
    const auto c = testing::randn(200, 13);
    const Gradients g = fcn_backward(model, fwd.tape, c);
    const auto analytic = g.flatten();
    REQUIRE(analytic.size() == parameter_count(small_config()));
    double largest = 0.0;
    for (double v : analytic) largest = std::max(largest, std::abs(v));
    auto params = flatten_parameters(model);
    FcnModel probe = model;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      const double h = 1e-7;
      params[i] = saved + h;
      assign_parameters(probe, params);
      const double up = weighted_output(probe, x, c);
      params[i] = saved - h;
      assign_parameters(probe, params);
      const double down = weighted_output(probe, x, c);
      params[i] = saved;
      worst = std::max(worst, train::relative_error(analytic[i], (up - down) / (2 * h), 1e-3 * largest));
    }
    assign_parameters(probe, params);
    CHECK(probe == model);
    CHECK(worst < 1e-4);

    double worst_in = 0.0;
    for (std::size_t t = 0; t < 200; t += 7) {
      Waveform up = x, down = x;
      up.samples[t] += 1e-7;
      down.samples[t] -= 1e-7;
      const double numeric = (weighted_output(model, up, c) - weighted_output(model, down, c)) / 2e-7;
      worst_in = std::max(worst_in, testing::rel_err(g.input_cotangent[t], numeric));
    }
    CHECK(worst_in < 1e-4);
  }

  SUBCASE("a channel silenced by a zero gain only reaches the loss through that gain") {
    FcnModel m = model;
    m.layers[0].norm->gamma[1] = 0.0;
    m.layers[0].norm->beta[1] = 0.5;
    const auto f = fcn_forward(m, x, Mode::kTrain);
    const auto c = testing::randn(200, 14);
    const Gradients g = fcn_backward(m, f.tape, c);
    const double base = weighted_output(m, x, c);
    for (std::size_t k = 0; k < 7; ++k) {
      CHECK(g.layers[0].kernels[1 * 7 + k] == 0.0);
      FcnModel moved = m;
      moved.layers[0].conv.weight(1, 0, k) += 0.1;
      CHECK(weighted_output(moved, x, c) == base);
    }
    CHECK(g.layers[0].bias[1] == 0.0);
    CHECK(g.layers[0].gamma[1] != 0.0);
    CHECK(g.layers[0].beta[1] != 0.0);
    FcnModel up = m, down = m;
    up.layers[0].norm->gamma[1] = 1e-7;
    down.layers[0].norm->gamma[1] = -1e-7;
    const double numeric = (weighted_output(up, x, c) - weighted_output(down, x, c)) / 2e-7;
    CHECK(testing::rel_err(g.layers[0].gamma[1], numeric) < 1e-4);
  }

  SUBCASE("stale or missing tapes are rejected") {
    FcnModel changed = model;
    changed.layers[1].conv.kernels[3] += 1e-3;
    CHECK(code_of([&] { fcn_backward(changed, fwd.tape, std::vector<double>(200, 1.0)); }) ==
          ErrorCode::kTapeMismatch);
    FcnModel restat = model;
    commit_running_stats(restat, fwd.tape);
    CHECK(code_of([&] { fcn_backward(restat, fwd.tape, std::vector<double>(200, 1.0)); }) ==
          ErrorCode::kTapeMismatch);
    const auto infer = fcn_forward(model, x, Mode::kInfer);
    CHECK(code_of([&] { fcn_backward(model, infer.tape, std::vector<double>(200, 1.0)); }) ==
          ErrorCode::kTapeMismatch);
    CHECK(code_of([&] { fcn_backward(model, fwd.tape, std::vector<double>(199, 1.0)); }) ==
          ErrorCode::kLengthMismatch);
  }

  SUBCASE("determinism") {
    const auto c = testing::randn(200, 15);
    CHECK(fcn_backward(model, fwd.tape, c).flatten() == fcn_backward(model, fwd.tape, c).flatten());
  }
}

TEST_CASE("running statistics are committed separately") {
  FcnModel model = init_model(small_config(), 21);
  const Waveform x{testing::randn(500, 22), 16000};
  const auto fwd = fcn_forward(model, x, Mode::kTrain);
  const FcnModel before = model;
  commit_running_stats(model, fwd.tape);
  const double keep = model.layers[0].norm->momentum;
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(model.layers[l].norm->running_mean[c] ==
            doctest::Approx(keep * before.layers[l].norm->running_mean[c] + (1.0 - keep) * fwd.tape.layers[l].stats.mean[c]));
      CHECK(model.layers[l].norm->running_var[c] ==
            doctest::Approx(keep * before.layers[l].norm->running_var[c] + (1.0 - keep) * fwd.tape.layers[l].stats.var[c]));
      CHECK(model.layers[l].norm->running_var[c] >= 0.0);
    }
  }
  CHECK(flatten_parameters(model) == flatten_parameters(before));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient") {
    std::vector<double> p{1.0, -2.0};
    AdamState s;
    adam_update(p, std::vector<double>{0.0, 0.0}, s, 1e-3);
    CHECK(p == std::vector<double>{1.0, -2.0});
    CHECK(s.step == 1);
  }
  SUBCASE("first step moves by the learning rate") {
    std::vector<double> p{0.0};
    AdamState s;
    adam_update(p, std::vector<double>{0.5}, s, 1e-3);
    CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  }
  SUBCASE("two steps match the moment recursion") {
    std::vector<double> p{0.3};
    AdamState s;
    const double g1 = 0.7, g2 = -0.2, lr = 0.01;
    adam_update(p, std::vector<double>{g1}, s, lr);
    adam_update(p, std::vector<double>{g2}, s, lr);
    double m = 0.0, v = 0.0, x = 0.3;
    int t = 0;
    for (double g : {g1, g2}) {
      ++t;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      x -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(p[0] == doctest::Approx(x).epsilon(1e-14));
    CHECK(s.step == 2);
  }
  SUBCASE("non-finite gradient aborts without side effects") {
    std::vector<double> p{1.0, 2.0};
    AdamState s;
    adam_update(p, std::vector<double>{0.1, 0.1}, s, 1e-3);
    const auto p_before = p;
    const auto m_before = s.m;
    CHECK(code_of([&] { adam_update(p, std::vector<double>{0.1, std::nan("")}, s, 1e-3); }) ==
          ErrorCode::kNonFiniteGradient);
    CHECK(code_of([&] { adam_update(p, std::vector<double>{INFINITY, 0.0}, s, 1e-3); }) ==
          ErrorCode::kNonFiniteGradient);
    CHECK(p == p_before);
    CHECK(s.m == m_before);
    CHECK(s.step == 1);
  }
  SUBCASE("model step updates every parameter") {
    FcnModel model = init_model(small_config(), 2);
    const auto before = flatten_parameters(model);
    Gradients g = Gradients::zeros_like(model);
    for (auto& l : g.layers) {
      for (double& v : l.kernels) v = 1.0;
      for (double& v : l.bias) v = 1.0;
      for (double& v : l.gamma) v = 1.0;
      for (double& v : l.beta) v = 1.0;
    }
    AdamState s;
    adam_step(model, g, s, 1e-3);
    const auto after = flatten_parameters(model);
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i] == doctest::Approx(before[i] - 1e-3).epsilon(1e-9));
  }
}

TEST_CASE("parameter counts") {
  CHECK(parameter_count(ModelConfig{7, 30, 55, true}) == 300931);
  CHECK(parameter_count(ModelConfig{5, 15, 55, true}) == 51376);
  CHECK(parameter_count(ModelConfig{0, 30, 55, true}) == 56);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> k(0, 6), f(1, 12), len(0, 10);
  for (int i = 0; i < 10; ++i) {
    ModelConfig mc{k(rng), f(rng), 2 * len(rng) + 1, i % 2 == 0};
    const FcnModel m = init_model(mc, i);
    std::size_t walked = 0;
    for (const auto& l : m.layers) {
      walked += l.conv.kernels.size() + l.conv.bias.size();
      if (l.norm) walked += l.norm->gamma.size() + l.norm->beta.size();
    }
    CHECK(walked == parameter_count(mc));
    CHECK(m.learnable_count() == parameter_count(mc));
    CHECK(flatten_parameters(m).size() == parameter_count(mc));
  }
}

TEST_CASE("initialization") {
  const ModelConfig mc = small_config();
  CHECK(init_model(mc, 4) == init_model(mc, 4));
  CHECK(init_model(mc, 4).layers[0].conv.kernels != init_model(mc, 5).layers[0].conv.kernels);
  const FcnModel m = init_model(ModelConfig{}, 8);
  REQUIRE(m.layers.size() == 8);
  CHECK(m.layers.front().conv.in_ch == 1);
  CHECK(m.layers.back().conv.out_ch == 1);
  CHECK(m.layers.back().conv.activation == Activation::kTanh);
  CHECK(!m.layers.back().norm);
  for (const auto& l : m.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.conv.in_ch * l.conv.kernel_len));
    for (double w : l.conv.kernels) CHECK(std::abs(w) <= bound);
    for (double b : l.conv.bias) CHECK(b == 0.0);
    if (l.norm) {
      for (double g : l.norm->gamma) CHECK(g == 1.0);
      for (double b : l.norm->beta) CHECK(b == 0.0);
    }
  }
  CHECK_NOTHROW(m.validate());
  FcnModel broken = m;
  broken.layers[2].conv.in_ch = 29;
  CHECK(code_of([&] { broken.validate(); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "fcnstoi_test_fcn";
  std::filesystem::create_directories(dir);
  const FcnModel m = init_model(small_config(), 31);

  SUBCASE("round trip is exact") {
    save_checkpoint(m, dir / "m.fcnw");
    CHECK(load_checkpoint(dir / "m.fcnw") == m);
    CHECK(!std::filesystem::exists(dir / "m.fcnw.tmp"));
    // A model with arbitrary doubles reaches a fixed point after one trip.
    FcnModel trained = m;
    auto p = flatten_parameters(trained);
    for (double& v : p) v += 0.123456789;
    assign_parameters(trained, p);
    const FcnModel once = parse_checkpoint(serialize_checkpoint(trained));
    CHECK(parse_checkpoint(serialize_checkpoint(once)) == once);
    CHECK(serialize_checkpoint(once) == serialize_checkpoint(trained));
  }

  SUBCASE("header layout") {
    const auto bytes = serialize_checkpoint(m);
    CHECK(std::memcmp(bytes.data(), "FCNW", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 3);
    // Header, then per layer 18 bytes of shape plus the f32 tensors.
    std::size_t expected = 12;
    for (const auto& l : m.layers) {
      expected += 18 + 4 * (l.conv.kernels.size() + l.conv.bias.size());
      if (l.norm) expected += 4 * (4 * l.norm->channels() + 1);
    }
    CHECK(bytes.size() == expected);
  }

  SUBCASE("corruption is detected") {
    auto bytes = serialize_checkpoint(m);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK(code_of([&] { parse_checkpoint(bad_magic); }) == ErrorCode::kCheckpointFormat);
    auto bad_version = bytes;
    bad_version[4] = 2;
    CHECK(code_of([&] { parse_checkpoint(bad_version); }) == ErrorCode::kCheckpointFormat);
    const auto& l0 = m.layers[0];
    const std::size_t layer1_start =
        12 + 18 + 4 * (l0.conv.kernels.size() + l0.conv.bias.size() + 4 * l0.norm->channels() + 1);
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + layer1_start + 40);
    CHECK(code_of([&] { parse_checkpoint(cut); }) == ErrorCode::kCheckpointFormat);
    CHECK(message_of([&] { parse_checkpoint(cut); }).find("layer 1") != std::string::npos);
    const std::vector<std::uint8_t> header_only(bytes.begin(), bytes.begin() + 6);
    CHECK(code_of([&] { parse_checkpoint(header_only); }) == ErrorCode::kCheckpointFormat);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK(code_of([&] { parse_checkpoint(trailing); }) == ErrorCode::kCheckpointFormat);
    CHECK(code_of([&] { load_checkpoint(dir / "missing.fcnw"); }) == ErrorCode::kIo);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("first-layer frequency response") {
  FcnModel m = init_model(ModelConfig{1, 3, 55, true}, 1);
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t k = 0; k < 55; ++k) m.layers[0].conv.weight(o, 0, k) = k == 27 ? 1.0 : 0.0;
  }
  const auto flat = first_layer_frequency_response(m, 512, 16000.0);
  REQUIRE(flat.magnitude.rows() == 3);
  REQUIRE(flat.magnitude.cols() == 257);
  for (double v : flat.magnitude.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(flat.freqs_hz[256] == doctest::Approx(8000.0));
  std::size_t above = 0;
  for (double f : flat.freqs_hz) above += f > 4000.0 ? 1 : 0;
  CHECK(above == 128);
  CHECK(flat.high_band_ratio == doctest::Approx(128.0 / 257.0).epsilon(1e-12));

  for (std::size_t k = 0; k < 55; ++k) m.layers[0].conv.weight(0, 0, k) = 1.0 / 55.0;
  const auto avg = first_layer_frequency_response(m, 512, 16000.0);
  CHECK(avg.magnitude(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t k = 1; k < 257; ++k) {
    const double w = std::numbers::pi * k / 512.0;
    const double dirichlet = std::abs(std::sin(55.0 * w) / (55.0 * std::sin(w)));
    CHECK(std::abs(avg.magnitude(0, k) - dirichlet) < 1e-12);
  }
  CHECK(avg.magnitude(0, 200) < 0.05);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = first_layer_frequency_response(init_model(small_config(), seed), 512, 16000.0);
    CHECK(r.high_band_ratio >= 0.0);
    CHECK(r.high_band_ratio <= 1.0);
  }
}
