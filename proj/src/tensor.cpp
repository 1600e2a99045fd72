#include "lsrs/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lsrs {

std::string to_string(const Shape4& s) {
    std::ostringstream os;
    os << "(" << s.d0 << "," << s.d1 << "," << s.d2 << "," << s.d3 << ")";
    return os.str();
}

std::string to_string(const Shape3& s) {
    std::ostringstream os;
    os << "(" << s.c << "," << s.h << "," << s.w << ")";
    return os.str();
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

double Tensor4::fro_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

void Tensor4::ensure_finite(const char* context) const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(context) + ": non-finite entry in tensor " +
                                     to_string(shape_));
        }
    }
}

Tensor4& Tensor4::operator+=(const Tensor4& other) {
    if (!(shape_ == other.shape_))
        throw std::invalid_argument("Tensor4 += shape mismatch: " + to_string(shape_) + " vs " +
                                    to_string(other.shape_));
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
    return *this;
}

Tensor4& Tensor4::operator-=(const Tensor4& other) {
    if (!(shape_ == other.shape_))
        throw std::invalid_argument("Tensor4 -= shape mismatch: " + to_string(shape_) + " vs " +
                                    to_string(other.shape_));
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
    return *this;
}

Tensor4& Tensor4::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

void Tensor4::add_scaled(double s, const Tensor4& other) {
    if (!(shape_ == other.shape_))
        throw std::invalid_argument("Tensor4 add_scaled shape mismatch");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += s * other.data_[k];
}

CTensor4::CTensor4(Shape4 shape, value_type fill) : shape_(shape), data_(shape.numel(), fill) {}

double CTensor4::fro_norm() const {
    double s = 0.0;
    for (const auto& v : data_) s += std::norm(v);
    return std::sqrt(s);
}

double CTensor4::max_abs_imag() const {
    double m = 0.0;
    for (const auto& v : data_) m = std::max(m, std::abs(v.imag()));
    return m;
}

void CTensor4::ensure_finite(const char* context) const {
    for (const auto& v : data_) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            throw std::runtime_error(std::string(context) + ": non-finite entry in tensor " +
                                     to_string(shape_));
        }
    }
}

CTensor4 to_complex(const Tensor4& x) {
    CTensor4 out(x.shape());
    auto src = x.flat();
    auto dst = out.flat();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = {src[k], 0.0};
    return out;
}

Tensor4 real_part(const CTensor4& x, double max_imag, const char* context) {
    const double residue = x.max_abs_imag();
    if (residue > max_imag) {
        std::ostringstream os;
        os << context << ": imaginary residue " << residue << " exceeds " << max_imag;
        throw std::runtime_error(os.str());
    }
    Tensor4 out(x.shape());
    auto src = x.flat();
    auto dst = out.flat();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k].real();
    return out;
}

double l2_distance(const Tensor4& a, const Tensor4& b) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument("l2_distance shape mismatch");
    double s = 0.0;
    auto fa = a.flat();
    auto fb = b.flat();
    for (std::size_t k = 0; k < fa.size(); ++k) {
        const double d = fa[k] - fb[k];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace lsrs
