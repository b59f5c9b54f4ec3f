#pragma once

#include <complex>
#include <cstddef>

namespace fcnstoi::dsp::detail {

// Cached FFTW plans for a real transform of length n. Execution is
// thread-safe; plan creation is serialized internally.
class RealFftPlan {
 public:
  static const RealFftPlan& get(std::size_t n);

  std::size_t size() const noexcept { return n_; }

  // in: n reals, out: n/2 + 1 bins.
  void forward(const double* in, std::complex<double>* out) const;
  // in: n/2 + 1 bins (clobbered), out: n reals, unnormalized.
  void inverse(std::complex<double>* in, double* out) const;

  RealFftPlan(const RealFftPlan&) = delete;
  RealFftPlan& operator=(const RealFftPlan&) = delete;
  ~RealFftPlan();

 private:
  explicit RealFftPlan(std::size_t n);

  std::size_t n_;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

}  // namespace fcnstoi::dsp::detail
