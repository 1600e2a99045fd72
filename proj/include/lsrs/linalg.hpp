#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace lsrs {

struct SingularMatrixError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Small dense complex matrix, row-major. Sized for the per-frequency c x c
// blocks of the spectral pipeline.
class CMatrix {
public:
    using value_type = std::complex<double>;

    CMatrix() = default;
    CMatrix(std::size_t rows, std::size_t cols, value_type fill = {});
    static CMatrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    value_type& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
    value_type operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

    CMatrix conj_transpose() const;
    double fro_norm() const;

    CMatrix operator*(const CMatrix& rhs) const;
    CMatrix operator+(const CMatrix& rhs) const;
    CMatrix operator-(const CMatrix& rhs) const;
    CMatrix& operator*=(value_type s);

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<value_type> a_;
};

// Solves a*y = b by LU with partial pivoting. `a` must be square; `b` may
// carry multiple right-hand sides as columns. Throws SingularMatrixError when
// a pivot magnitude falls below 1e-12.
CMatrix complex_solve(const CMatrix& a, const CMatrix& b);

}  // namespace lsrs
