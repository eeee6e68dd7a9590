#pragma once

// 2-D discrete Fourier transform over the last two axes, backed by FFTW.
//
// Forward is unnormalized, inverse carries the 1/(H*W) factor. Any extent
// >= 1 works.

#include <complex>
#include <span>
#include <vector>

#include "nutri/tensor.hpp"

namespace nutri {

struct ComplexTensor {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  static ComplexTensor from_real(const Tensor& x);
  std::size_t numel() const { return re.size(); }
};

// In-place 1-D transform, unnormalized in both directions.
void fft1d(std::span<std::complex<double>> data, bool inverse);

ComplexTensor fft2(const ComplexTensor& x);
ComplexTensor fft2(const Tensor& x);
ComplexTensor ifft2(const ComplexTensor& x);

}  // namespace nutri
