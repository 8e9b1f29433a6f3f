// Copyright 2026 The avgen authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <vector>

namespace avgen {

/// One-dimensional real<->complex FFT of a fixed length, backed by FFTW.
/// Forward fills n/2+1 half-spectrum bins; inverse applies the usual 1/n
/// normalization so inverse(forward(x)) == x. Instances are cheap enough to
/// create per call site; plan creation is serialized internally, execution
/// is thread-safe per instance as long as each thread owns its own RealFft.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  void forward(const double* in, std::complex<double>* out) const;
  void inverse(const std::complex<double>* in, double* out) const;

 private:
  int n_;
  void* plan_fwd_;
  void* plan_inv_;
  double* real_buf_;
  void* cplx_buf_;
};

}  // namespace avgen
