#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace lsrs {

// Shape of a dense 4-way array, usually (batch, channels, rows, cols).
struct Shape4 {
    std::size_t d0 = 0;
    std::size_t d1 = 0;
    std::size_t d2 = 0;
    std::size_t d3 = 0;

    std::size_t numel() const { return d0 * d1 * d2 * d3; }
    bool operator==(const Shape4&) const = default;
};

// Per-example shape (channels, rows, cols).
struct Shape3 {
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t numel() const { return c * h * w; }
    bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape4& s);
std::string to_string(const Shape3& s);

// Dense real 4-way array in row-major order.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape4 shape, double fill = 0.0);

    const Shape4& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t example_size() const { return shape_.d1 * shape_.d2 * shape_.d3; }
    Shape3 example_shape() const { return {shape_.d1, shape_.d2, shape_.d3}; }

    double& at(std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
        return data_[((b * shape_.d1 + c) * shape_.d2 + i) * shape_.d3 + j];
    }
    double at(std::size_t b, std::size_t c, std::size_t i, std::size_t j) const {
        return data_[((b * shape_.d1 + c) * shape_.d2 + i) * shape_.d3 + j];
    }
    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return {data_.data(), data_.size()}; }
    std::span<double> example(std::size_t b) {
        return {data_.data() + b * example_size(), example_size()};
    }
    std::span<const double> example(std::size_t b) const {
        return {data_.data() + b * example_size(), example_size()};
    }

    double fro_norm() const;
    // Throws std::runtime_error naming `context` if any entry is NaN or Inf.
    void ensure_finite(const char* context) const;

    Tensor4& operator+=(const Tensor4& other);
    Tensor4& operator-=(const Tensor4& other);
    Tensor4& operator*=(double s);
    // this += s * other
    void add_scaled(double s, const Tensor4& other);

private:
    Shape4 shape_;
    std::vector<double> data_;
};

// Dense complex 4-way array in row-major order.
class CTensor4 {
public:
    using value_type = std::complex<double>;

    CTensor4() = default;
    explicit CTensor4(Shape4 shape, value_type fill = {});

    const Shape4& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    value_type& at(std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
        return data_[((b * shape_.d1 + c) * shape_.d2 + i) * shape_.d3 + j];
    }
    value_type at(std::size_t b, std::size_t c, std::size_t i, std::size_t j) const {
        return data_[((b * shape_.d1 + c) * shape_.d2 + i) * shape_.d3 + j];
    }
    value_type& operator[](std::size_t k) { return data_[k]; }
    const value_type& operator[](std::size_t k) const { return data_[k]; }

    std::span<value_type> flat() { return data_; }
    std::span<const value_type> flat() const { return {data_.data(), data_.size()}; }

    double fro_norm() const;
    double max_abs_imag() const;
    void ensure_finite(const char* context) const;

private:
    Shape4 shape_;
    std::vector<value_type> data_;
};

// Promotes a real tensor to complex.
CTensor4 to_complex(const Tensor4& x);
// Real part; throws if any |imag| exceeds max_imag (the residue policy).
Tensor4 real_part(const CTensor4& x, double max_imag, const char* context);

double l2_distance(const Tensor4& a, const Tensor4& b);

}  // namespace lsrs
