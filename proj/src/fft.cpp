#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "fcnstoi/dsp.hpp"
#include "fcnstoi/error.hpp"
#include "fft_plan.hpp"

namespace fcnstoi::dsp {
namespace detail {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

RealFftPlan::RealFftPlan(std::size_t n) : n_(n) {
  const int len = static_cast<int>(n);
  std::vector<double> real(n);
  std::vector<std::complex<double>> cplx(n / 2 + 1);
  auto* c = reinterpret_cast<fftw_complex*>(cplx.data());
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  forward_plan_ = fftw_plan_dft_r2c_1d(len, real.data(), c, flags);
  inverse_plan_ = fftw_plan_dft_c2r_1d(len, c, real.data(), flags);
}

RealFftPlan::~RealFftPlan() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
}

const RealFftPlan& RealFftPlan::get(std::size_t n) {
  static std::map<std::size_t, std::unique_ptr<RealFftPlan>> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  auto it = cache.find(n);
  if (it == cache.end()) {
    it = cache.emplace(n, std::unique_ptr<RealFftPlan>(new RealFftPlan(n))).first;
  }
  return *it->second;
}

void RealFftPlan::forward(const double* in, std::complex<double>* out) const {
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), const_cast<double*>(in),
                       reinterpret_cast<fftw_complex*>(out));
}

void RealFftPlan::inverse(std::complex<double>* in, double* out) const {
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_),
                       reinterpret_cast<fftw_complex*>(in), out);
}

}  // namespace detail

bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

std::vector<std::complex<double>> rfft(std::span<const double> input, std::size_t nfft) {
  if (!is_power_of_two(nfft) || input.size() > nfft) {
    throw Error(ErrorCode::kInvalidArgument,
                "rfft: nfft must be a power of two no shorter than the input");
  }
  std::vector<double> padded(nfft, 0.0);
  std::copy(input.begin(), input.end(), padded.begin());
  std::vector<std::complex<double>> out(nfft / 2 + 1);
  detail::RealFftPlan::get(nfft).forward(padded.data(), out.data());
  return out;
}

std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t nfft) {
  if (!is_power_of_two(nfft) || spectrum.size() != nfft / 2 + 1) {
    throw Error(ErrorCode::kInvalidArgument, "irfft: spectrum must hold nfft/2 + 1 bins");
  }
  std::vector<std::complex<double>> scratch(spectrum.begin(), spectrum.end());
  std::vector<double> out(nfft);
  detail::RealFftPlan::get(nfft).inverse(scratch.data(), out.data());
  const double scale = 1.0 / static_cast<double>(nfft);
  for (double& v : out) v *= scale;
  return out;
}

}  // namespace fcnstoi::dsp
