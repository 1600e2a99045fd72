#include <complex>

#include "doctest.h"
#include "lsrs/linalg.hpp"
#include "lsrs/rng.hpp"

using lsrs::CMatrix;

namespace {

CMatrix random_matrix(std::size_t n, std::uint64_t seed, double scale) {
    lsrs::Rng rng(seed);
    CMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            m(i, j) = {scale * (2.0 * rng.uniform01() - 1.0),
                       scale * (2.0 * rng.uniform01() - 1.0)};
        }
    }
    return m;
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("identity solve returns the right-hand side") {
    const CMatrix b = random_matrix(4, 11, 1.0);
    const CMatrix y = lsrs::complex_solve(CMatrix::identity(4), b);
    CHECK((y - b).fro_norm() < 1e-14);
}

TEST_CASE("scalar matrix halves the right-hand side") {
    CMatrix a = CMatrix::identity(3);
    a *= std::complex<double>{2.0, 0.0};
    const CMatrix b = random_matrix(3, 12, 1.0);
    const CMatrix y = lsrs::complex_solve(a, b);
    CMatrix expect = b;
    expect *= std::complex<double>{0.5, 0.0};
    CHECK((y - expect).fro_norm() < 1e-14);
}

TEST_CASE("well-conditioned 8x8 solve leaves a tiny residual") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CMatrix a = random_matrix(8, 100 + seed, 0.3);
        for (std::size_t i = 0; i < 8; ++i) a(i, i) += 1.0;
        const CMatrix b = random_matrix(8, 200 + seed, 1.0);
        const CMatrix y = lsrs::complex_solve(a, b);
        CHECK((a * y - b).fro_norm() <= 1e-8 * b.fro_norm());
    }
}

TEST_CASE("singular matrix raises SingularMatrixError") {
    CMatrix a(3, 3);
    CHECK_THROWS_AS(lsrs::complex_solve(a, CMatrix::identity(3)), lsrs::SingularMatrixError);

    CMatrix dup = random_matrix(3, 77, 1.0);
    for (std::size_t j = 0; j < 3; ++j) dup(2, j) = dup(1, j);
    CHECK_THROWS_AS(lsrs::complex_solve(dup, CMatrix::identity(3)), lsrs::SingularMatrixError);
}

TEST_CASE("conjugate transpose reverses products") {
    const CMatrix a = random_matrix(4, 31, 1.0);
    const CMatrix b = random_matrix(4, 32, 1.0);
    const CMatrix lhs = (a * b).conj_transpose();
    const CMatrix rhs = b.conj_transpose() * a.conj_transpose();
    CHECK((lhs - rhs).fro_norm() < 1e-12);
}

TEST_CASE("shape mismatches are rejected") {
    CHECK_THROWS_AS(lsrs::complex_solve(CMatrix(2, 3), CMatrix(2, 2)), std::invalid_argument);
    CHECK_THROWS_AS(lsrs::complex_solve(CMatrix::identity(3), CMatrix(2, 2)), std::invalid_argument);
}

}  // TEST_SUITE
