#include "lsrs/fft.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace lsrs {

namespace {

using cd = std::complex<double>;

bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2, length must be a power of two.
void fft_pow2(cd* a, std::size_t n, bool inverse) {
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / double(len);
        const cd wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cd u = a[i + k];
                const cd v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Direct O(n^2) transform for non-power-of-two lengths.
void dft_naive(cd* a, std::size_t n, bool inverse, std::vector<cd>& scratch) {
    scratch.assign(a, a + n);
    const double sign = inverse ? 2.0 : -2.0;
    for (std::size_t k = 0; k < n; ++k) {
        cd acc(0.0, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double ang = sign * std::numbers::pi * double((j * k) % n) / double(n);
            acc += scratch[j] * cd(std::cos(ang), std::sin(ang));
        }
        a[k] = acc;
    }
}

void transform_1d(cd* a, std::size_t n, bool inverse, std::vector<cd>& scratch) {
    if (n == 1) return;
    if (is_pow2(n)) {
        fft_pow2(a, n, inverse);
    } else {
        dft_naive(a, n, inverse, scratch);
    }
}

// Transforms the trailing two axes of every (d0,d1) slice. No normalization.
void transform_2d_all(CTensor4& x, bool inverse) {
    const Shape4 s = x.shape();
    if (s.numel() == 0) throw std::invalid_argument("fft2: empty tensor");
    const std::size_t slices = s.d0 * s.d1;
    const std::size_t rows = s.d2, cols = s.d3;
    std::vector<cd> buf(std::max(rows, cols));
    std::vector<cd> scratch;
    cd* data = x.flat().data();
    for (std::size_t sl = 0; sl < slices; ++sl) {
        cd* base = data + sl * rows * cols;
        // rows: contiguous
        for (std::size_t r = 0; r < rows; ++r) {
            transform_1d(base + r * cols, cols, inverse, scratch);
        }
        // columns: gather/scatter through a buffer
        if (rows > 1) {
            for (std::size_t c = 0; c < cols; ++c) {
                for (std::size_t r = 0; r < rows; ++r) buf[r] = base[r * cols + c];
                transform_1d(buf.data(), rows, inverse, scratch);
                for (std::size_t r = 0; r < rows; ++r) base[r * cols + c] = buf[r];
            }
        }
    }
}

}  // namespace

CTensor4 fft2(const Tensor4& x) { return fft2(to_complex(x)); }

CTensor4 fft2(const CTensor4& x) {
    CTensor4 out = x;
    transform_2d_all(out, /*inverse=*/false);
    return out;
}

CTensor4 ifft2(const CTensor4& x) {
    CTensor4 out = x;
    transform_2d_all(out, /*inverse=*/true);
    const double scale = 1.0 / double(out.shape().d2 * out.shape().d3);
    for (auto& v : out.flat()) v *= scale;
    return out;
}

}  // namespace lsrs
