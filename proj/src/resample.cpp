#include <cmath>
#include <numeric>
#include <string>

#include "fcnstoi/dsp.hpp"
#include "fcnstoi/error.hpp"

namespace fcnstoi::dsp {
namespace {

constexpr int kMaxRatioTerm = 64;
constexpr int kZeroCrossings = 16;
constexpr double kKaiserBeta = 8.6;

struct Ratio {
  long up = 1;
  long down = 1;
};

Ratio reduce_ratio(int source_rate, int target_rate) {
  if (source_rate <= 0 || target_rate <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "resample: sample rates must be positive");
  }
  const int g = std::gcd(source_rate, target_rate);
  Ratio r{target_rate / g, source_rate / g};
  if (r.up > kMaxRatioTerm || r.down > kMaxRatioTerm) {
    throw Error(ErrorCode::kUnsupportedRate,
                "resample: ratio " + std::to_string(target_rate) + "/" +
                    std::to_string(source_rate) + " reduces to " + std::to_string(r.up) + "/" +
                    std::to_string(r.down) + ", terms above 64 are unsupported");
  }
  return r;
}

long positive_mod(long a, long m) {
  const long r = a % m;
  return r < 0 ? r + m : r;
}

long floor_div(long a, long b) {
  long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Kaiser-windowed sinc sampled at the upsampled rate, centred on offset 0.
// Every polyphase branch is normalized to unit DC gain.
struct Filter {
  Ratio ratio;
  long half = 0;
  std::vector<double> taps;  // offsets -half..half

  double at(long offset) const { return taps[static_cast<std::size_t>(offset + half)]; }
};

Filter design_filter(Ratio ratio) {
  Filter f;
  f.ratio = ratio;
  const long width = std::max(ratio.up, ratio.down);
  f.half = kZeroCrossings * width;
  f.taps.resize(static_cast<std::size_t>(2 * f.half + 1));
  const double norm = std::cyl_bessel_i(0.0, kKaiserBeta);
  for (long d = -f.half; d <= f.half; ++d) {
    const double x = static_cast<double>(d) / static_cast<double>(width);
    const double sinc = d == 0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
    const double r = static_cast<double>(d) / static_cast<double>(f.half);
    const double kaiser = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / norm;
    f.taps[static_cast<std::size_t>(d + f.half)] = sinc * kaiser;
  }
  std::vector<double> branch_sum(static_cast<std::size_t>(ratio.up), 0.0);
  for (long d = -f.half; d <= f.half; ++d) {
    branch_sum[static_cast<std::size_t>(positive_mod(d, ratio.up))] += f.at(d);
  }
  for (long d = -f.half; d <= f.half; ++d) {
    f.taps[static_cast<std::size_t>(d + f.half)] /=
        branch_sum[static_cast<std::size_t>(positive_mod(d, ratio.up))];
  }
  return f;
}

// Calls visit(output_index, input_index, weight) for every nonzero term of
// y[m] = sum_n x[n] h(m q - n p).
template <typename Visit>
void for_each_term(const Filter& f, std::size_t in_len, std::size_t out_len, Visit&& visit) {
  const long p = f.ratio.up;
  const long q = f.ratio.down;
  const long last = static_cast<long>(in_len) - 1;
  for (std::size_t m = 0; m < out_len; ++m) {
    const long centre = static_cast<long>(m) * q;
    long n_lo = floor_div(centre - f.half + p - 1, p);
    long n_hi = floor_div(centre + f.half, p);
    n_lo = std::max(n_lo, 0L);
    n_hi = std::min(n_hi, last);
    for (long n = n_lo; n <= n_hi; ++n) {
      visit(m, static_cast<std::size_t>(n), f.at(centre - n * p));
    }
  }
}

}  // namespace

std::size_t resampled_length(std::size_t source_len, int source_rate, int target_rate) {
  const Ratio r = reduce_ratio(source_rate, target_rate);
  const auto num = static_cast<unsigned long long>(source_len) * static_cast<unsigned long long>(r.up);
  const auto den = static_cast<unsigned long long>(r.down);
  return static_cast<std::size_t>((num + den - 1) / den);
}

Waveform resample_linear_phase(const Waveform& wave, int target_rate) {
  const Ratio r = reduce_ratio(wave.sample_rate, target_rate);
  if (r.up == 1 && r.down == 1) return Waveform{wave.samples, target_rate};
  const Filter f = design_filter(r);
  Waveform out{std::vector<double>(resampled_length(wave.size(), wave.sample_rate, target_rate), 0.0),
               target_rate};
  const double* x = wave.samples.data();
  double* y = out.samples.data();
  for_each_term(f, wave.size(), out.size(),
                [&](std::size_t m, std::size_t n, double h) { y[m] += h * x[n]; });
  return out;
}

std::vector<double> resample_adjoint(std::size_t source_len, int source_rate, int target_rate,
                                     std::span<const double> cotangent) {
  const Ratio r = reduce_ratio(source_rate, target_rate);
  if (cotangent.size() != resampled_length(source_len, source_rate, target_rate)) {
    throw Error(ErrorCode::kInvalidArgument, "resample_adjoint: cotangent length mismatch");
  }
  if (r.up == 1 && r.down == 1) return {cotangent.begin(), cotangent.end()};
  const Filter f = design_filter(r);
  std::vector<double> grad(source_len, 0.0);
  for_each_term(f, source_len, cotangent.size(), [&](std::size_t m, std::size_t n, double h) {
    grad[n] += h * cotangent[m];
  });
  return grad;
}

}  // namespace fcnstoi::dsp
