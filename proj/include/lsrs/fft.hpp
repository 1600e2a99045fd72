#pragma once

#include "lsrs/tensor.hpp"

namespace lsrs {

// Unnormalized forward DFT along the last two axes. The inverse carries the
// 1/(d2*d3) factor, so ifft2(fft2(x)) == x and Parseval reads
// |fft2(x)|_F = sqrt(d2*d3) * |x|_F.
//
// Power-of-two axis lengths run radix-2 Cooley-Tukey; other lengths fall back
// to the direct O(n^2) transform per axis.
CTensor4 fft2(const Tensor4& x);
CTensor4 fft2(const CTensor4& x);
CTensor4 ifft2(const CTensor4& x);

}  // namespace lsrs
