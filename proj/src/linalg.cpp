#include "lsrs/linalg.hpp"

#include <cmath>
#include <string>

namespace lsrs {

CMatrix::CMatrix(std::size_t rows, std::size_t cols, value_type fill)
    : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

CMatrix CMatrix::identity(std::size_t n) {
    CMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = {1.0, 0.0};
    return m;
}

CMatrix CMatrix::conj_transpose() const {
    CMatrix m(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) m(j, i) = std::conj((*this)(i, j));
    return m;
}

double CMatrix::fro_norm() const {
    double s = 0.0;
    for (const auto& v : a_) s += std::norm(v);
    return std::sqrt(s);
}

CMatrix CMatrix::operator*(const CMatrix& rhs) const {
    if (cols_ != rhs.rows_) throw std::invalid_argument("CMatrix multiply: inner dim mismatch");
    CMatrix out(rows_, rhs.cols_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t k = 0; k < cols_; ++k) {
            const value_type aik = (*this)(i, k);
            if (aik == value_type{}) continue;
            for (std::size_t j = 0; j < rhs.cols_; ++j) out(i, j) += aik * rhs(k, j);
        }
    }
    return out;
}

CMatrix CMatrix::operator+(const CMatrix& rhs) const {
    if (rows_ != rhs.rows_ || cols_ != rhs.cols_)
        throw std::invalid_argument("CMatrix add: shape mismatch");
    CMatrix out = *this;
    for (std::size_t k = 0; k < a_.size(); ++k) out.a_[k] += rhs.a_[k];
    return out;
}

CMatrix CMatrix::operator-(const CMatrix& rhs) const {
    if (rows_ != rhs.rows_ || cols_ != rhs.cols_)
        throw std::invalid_argument("CMatrix sub: shape mismatch");
    CMatrix out = *this;
    for (std::size_t k = 0; k < a_.size(); ++k) out.a_[k] -= rhs.a_[k];
    return out;
}

CMatrix& CMatrix::operator*=(value_type s) {
    for (auto& v : a_) v *= s;
    return *this;
}

CMatrix complex_solve(const CMatrix& a, const CMatrix& b) {
    if (a.rows() != a.cols()) throw std::invalid_argument("complex_solve: matrix not square");
    if (a.rows() != b.rows())
        throw std::invalid_argument("complex_solve: rhs row count mismatch");
    const std::size_t n = a.rows();
    const std::size_t m = b.cols();
    CMatrix lu = a;
    CMatrix y = b;

    for (std::size_t col = 0; col < n; ++col) {
        // partial pivot
        std::size_t piv = col;
        double best = std::abs(lu(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            const double mag = std::abs(lu(r, col));
            if (mag > best) {
                best = mag;
                piv = r;
            }
        }
        if (best < 1e-12) {
            throw SingularMatrixError("complex_solve: pivot " + std::to_string(col) +
                                      " magnitude " + std::to_string(best) + " below 1e-12");
        }
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(lu(col, j), lu(piv, j));
            for (std::size_t j = 0; j < m; ++j) std::swap(y(col, j), y(piv, j));
        }
        const CMatrix::value_type d = lu(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const CMatrix::value_type f = lu(r, col) / d;
            if (f == CMatrix::value_type{}) continue;
            lu(r, col) = f;
            for (std::size_t j = col + 1; j < n; ++j) lu(r, j) -= f * lu(col, j);
            for (std::size_t j = 0; j < m; ++j) y(r, j) -= f * y(col, j);
        }
    }
    // back substitution
    for (std::size_t ri = n; ri-- > 0;) {
        for (std::size_t j = 0; j < m; ++j) {
            CMatrix::value_type acc = y(ri, j);
            for (std::size_t k = ri + 1; k < n; ++k) acc -= lu(ri, k) * y(k, j);
            y(ri, j) = acc / lu(ri, ri);
        }
    }
    return y;
}

}  // namespace lsrs
