// Copyright 2026 The urbansound Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Thin wrapper over FFTW real transforms. Plans are created once per size under
// a lock (planning is not thread-safe) and executed with the new-array API,
// which is.

#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "urbansound/common.hpp"

namespace urbansound {

class RealFft {
 public:
  explicit RealFft(int n) : n_(n), plans_(plans_for(n)) {}

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  /// Forward transform of n real samples; returns n/2+1 complex bins (unnormalized).
  std::vector<std::complex<double>> forward(std::span<const double> in) const {
    if (static_cast<int>(in.size()) != n_) throw SizeError("fft input length mismatch");
    std::vector<double> buf(in.begin(), in.end());
    std::vector<std::complex<double>> out(bins());
    fftw_execute_dft_r2c(plans_->r2c, buf.data(), reinterpret_cast<fftw_complex*>(out.data()));
    return out;
  }

  /// Inverse transform; output is scaled by n (FFTW convention).
  std::vector<double> inverse(std::span<const std::complex<double>> in) const {
    if (static_cast<int>(in.size()) != bins()) throw SizeError("ifft input length mismatch");
    std::vector<std::complex<double>> buf(in.begin(), in.end());
    std::vector<double> out(n_);
    fftw_execute_dft_c2r(plans_->c2r, reinterpret_cast<fftw_complex*>(buf.data()), out.data());
    return out;
  }

 private:
  struct Plans {
    fftw_plan r2c = nullptr;
    fftw_plan c2r = nullptr;
    ~Plans() {
      if (r2c) fftw_destroy_plan(r2c);
      if (c2r) fftw_destroy_plan(c2r);
    }
  };

  static std::shared_ptr<const Plans> plans_for(int n) {
    if (n < 2) throw SizeError("fft size must be >= 2");
    static std::mutex mu;
    static std::map<int, std::shared_ptr<const Plans>> cache;
    std::lock_guard lock(mu);
    if (auto it = cache.find(n); it != cache.end()) return it->second;
    auto plans = std::make_shared<Plans>();
    double* real = fftw_alloc_real(n);
    fftw_complex* cplx = fftw_alloc_complex(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    plans->r2c = fftw_plan_dft_r2c_1d(n, real, cplx, flags);
    plans->c2r = fftw_plan_dft_c2r_1d(n, cplx, real, flags);
    fftw_free(real);
    fftw_free(cplx);
    cache.emplace(n, plans);
    return plans;
  }

  int n_;
  std::shared_ptr<const Plans> plans_;
};

}  // namespace urbansound
