#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fcnstoi/error.hpp"
#include "fcnstoi/losses.hpp"
#include "fcnstoi/trainer.hpp"
#include "support.hpp"

using namespace fcnstoi;
using namespace fcnstoi::losses;

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

LossSpec spec_of(LossKind kind) {
  LossSpec s;
  s.kind = kind;
  return s;
}

constexpr LossKind kAllKinds[] = {LossKind::kMse, LossKind::kNegStoi, LossKind::kMsePlusStoi,
                                  LossKind::kConditional};

}  // namespace

TEST_CASE("loss names") {
  CHECK(parse_loss_kind("mse") == LossKind::kMse);
  CHECK(parse_loss_kind("stoi") == LossKind::kNegStoi);
  CHECK(parse_loss_kind("neg_stoi") == LossKind::kNegStoi);
  CHECK(parse_loss_kind("mse+stoi") == LossKind::kMsePlusStoi);
  CHECK(parse_loss_kind("mse_plus_stoi") == LossKind::kMsePlusStoi);
  CHECK(parse_loss_kind("conditional") == LossKind::kConditional);
  for (LossKind k : kAllKinds) CHECK(parse_loss_kind(loss_kind_name(k)) == k);
  CHECK(code_of([] { parse_loss_kind("pesq"); }) == ErrorCode::kInvalidArgument);
  LossSpec bad = spec_of(LossKind::kMsePlusStoi);
  bad.alpha = -1.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("mean squared error") {
  const Waveform zero{{0.0, 0.0}, 16000};
  const Waveform est{{1.0, -1.0}, 16000};
  const LossValue v = mse_loss(zero, est);
  CHECK(v.value == 1.0);
  CHECK(v.cotangent == std::vector<double>{1.0, -1.0});

  const LossValue same = mse_loss(est, est);
  CHECK(same.value == 0.0);
  for (double c : same.cotangent) CHECK(c == 0.0);

  const Waveform a{testing::randn(777, 1), 16000};
  const Waveform b{testing::randn(777, 2), 16000};
  double sum = 0.0;
  for (std::size_t i = 0; i < 777; ++i) sum += (a.samples[i] - b.samples[i]) * (a.samples[i] - b.samples[i]);
  const LossValue r = mse_loss(a, b);
  CHECK(std::abs(r.value - sum / 777.0) < 1e-12);
  for (std::size_t i = 0; i < 777; ++i) {
    CHECK(std::abs(r.cotangent[i] - 2.0 * (b.samples[i] - a.samples[i]) / 777.0) < 1e-15);
  }
  CHECK(code_of([&] { mse_loss(a, zero); }) == ErrorCode::kLengthMismatch);
}

TEST_CASE("every loss at the optimum") {
  const Waveform clean = synth::speech_like(1.0, 16000, 3);
  for (LossKind k : kAllKinds) {
    const LossValue v = evaluate_loss(spec_of(k), clean, clean);
    CAPTURE(loss_kind_name(k));
    if (k == LossKind::kMse) {
      CHECK(v.value == 0.0);
      for (double c : v.cotangent) CHECK(c == 0.0);
    } else {
      CHECK(v.value == doctest::Approx(-1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("negative intelligibility loss") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto p = testing::noisy_pair(1.0, 16000, seed, -3.0);
    const LossValue v = neg_stoi_loss(p.clean, p.noisy);
    CHECK(v.value >= -1.0);
    CHECK(v.value <= 1.0);
    CHECK(v.value == doctest::Approx(-stoi::stoi_score(p.clean, p.noisy)).epsilon(1e-12));
  }
  const Waveform zero{std::vector<double>(16000, 0.0), 16000};
  const Waveform x = synth::speech_like(1.0, 16000, 1);
  CHECK(code_of([&] { neg_stoi_loss(zero, x); }) == ErrorCode::kDegenerateReference);
  const Waveform brief{testing::randn(3000, 1), 16000};
  CHECK(code_of([&] { neg_stoi_loss(brief, brief); }) == ErrorCode::kUtteranceTooShort);
}

TEST_CASE("combined loss is the affine combination of its parts") {
  const auto p = testing::noisy_pair(1.0, 16000, 4, 0.0);
  const LossValue mse = mse_loss(p.clean, p.noisy);
  const LossValue neg = neg_stoi_loss(p.clean, p.noisy);
  for (double alpha : {0.0, 1.0, 100.0, 250.0}) {
    const LossValue c = combined_loss(p.clean, p.noisy, alpha);
    CHECK(c.value == doctest::Approx(alpha * mse.value + neg.value).epsilon(1e-14));
    for (std::size_t i = 0; i < c.cotangent.size(); i += 97) {
      CHECK(c.cotangent[i] == doctest::Approx(alpha * mse.cotangent[i] + neg.cotangent[i]).epsilon(1e-12));
    }
  }
  const LossValue zero_alpha = combined_loss(p.clean, p.noisy, 0.0);
  CHECK(zero_alpha.value == neg.value);
  CHECK(zero_alpha.cotangent == neg.cotangent);
  CHECK(evaluate_loss(spec_of(LossKind::kMsePlusStoi), p.clean, p.noisy).value ==
        combined_loss(p.clean, p.noisy, 100.0).value);
}

TEST_CASE("silent samples follow the frame energy rule") {
  // Loud first half, digital silence afterwards: the tail is silent and the
  // last stretch that no frame covers also counts as silent.
  Waveform clean{std::vector<double>(5001, 0.0), 16000};
  const auto burst = testing::randn(2400, 7, 0.3);
  std::copy(burst.begin(), burst.end(), clean.samples.begin());
  const SilentRule rule;
  const auto silent = silent_samples(clean, rule);
  REQUIRE(silent.size() == clean.size());
  // Frame 410 samples (256 scaled to 16 kHz, rounded even), hop 205.
  const auto mask = stoi::frame_activity(clean.samples, 410, 205, 40.0);
  std::vector<bool> expected(clean.size(), true);
  for (std::size_t t = 0; t < mask.keep.size(); ++t) {
    if (!mask.keep[t]) continue;
    for (std::size_t n = 0; n < 410; ++n) expected[t * 205 + n] = false;
  }
  CHECK(silent == expected);
  CHECK(!silent[100]);
  CHECK(silent[4000]);
  CHECK(silent[5000]);

  SilentRule custom;
  custom.frame_len = 100;
  custom.hop = 50;
  const auto s2 = silent_samples(clean, custom);
  CHECK(!s2[100]);
  CHECK(s2[4000]);
}

TEST_CASE("conditional loss") {
  const auto p = testing::noisy_pair(1.5, 16000, 5, 0.0);
  const LossSpec spec = spec_of(LossKind::kConditional);
  const auto silent = silent_samples(p.clean, spec.silent);
  std::size_t count = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < silent.size(); ++i) {
    if (!silent[i]) continue;
    ++count;
    sum += (p.clean.samples[i] - p.noisy.samples[i]) * (p.clean.samples[i] - p.noisy.samples[i]);
  }
  REQUIRE(count > 0);
  const LossValue v = conditional_loss(p.clean, p.noisy, 100.0, spec.silent);
  const double neg = neg_stoi_loss(p.clean, p.noisy).value;
  CHECK(!v.silent_term_skipped);
  CHECK(v.value - neg == doctest::Approx(100.0 * sum / count).epsilon(1e-12));

  // A reference with no silent sample at all reduces to the intelligibility term.
  Waveform busy{testing::randn(16000, 8, 0.2), 16000};
  for (std::size_t i = 0; i < busy.size(); ++i) busy.samples[i] += 0.3 * std::sin(0.05 * i);
  const Waveform est{testing::randn(16000, 9, 0.2), 16000};
  SilentRule tiny;
  tiny.frame_len = 4;
  tiny.hop = 2;
  tiny.dyn_range_db = 400.0;
  const auto busy_silent = silent_samples(busy, tiny);
  REQUIRE(std::none_of(busy_silent.begin(), busy_silent.end(), [](bool b) { return b; }));
  const LossValue none = conditional_loss(busy, est, 100.0, tiny);
  const LossValue plain = neg_stoi_loss(busy, est);
  CHECK(none.silent_term_skipped);
  CHECK(none.value == plain.value);
  CHECK(none.cotangent == plain.cotangent);
}

TEST_CASE("loss cotangents match finite differences") {
  for (LossKind k : kAllKinds) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CAPTURE(loss_kind_name(k));
      CAPTURE(seed);
      const auto p = testing::noisy_pair(1.0, 16000, seed + 40, 0.0);
      const LossSpec spec = spec_of(k);
      const LossValue v = evaluate_loss(spec, p.clean, p.noisy);
      double largest = 0.0;
      for (double c : v.cotangent) largest = std::max(largest, std::abs(c));
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, p.noisy.size() - 1);
      double worst = 0.0;
      for (int i = 0; i < 64; ++i) {
        const std::size_t idx = pick(rng);
        const double h = 1e-5;
        Waveform up = p.noisy, down = p.noisy;
        up.samples[idx] += h;
        down.samples[idx] -= h;
        const double numeric =
            (evaluate_loss(spec, p.clean, up).value - evaluate_loss(spec, p.clean, down).value) / (2 * h);
        worst = std::max(worst, train::relative_error(v.cotangent[idx], numeric, 1e-3 * largest));
      }
      CHECK(worst < 1e-4);
    }
  }
}
