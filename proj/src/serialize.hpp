#pragma once

// Binary checkpoint primitives. Everything is written as explicit
// little-endian bytes so save -> load -> save round-trips bit-exactly.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsrs/tensor.hpp"

namespace lsrs::ser {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) {
        throw std::runtime_error("checkpoint: truncated while reading u64");
    }
    std::uint64_t v = 0;
    for (int k = 7; k >= 0; --k) v = (v << 8) | b[k];
    return v;
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const std::uint64_t len = read_u64(is);
    if (len > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(len, '\0');
    if (len > 0 && !is.read(s.data(), static_cast<std::streamsize>(len))) {
        throw std::runtime_error("checkpoint: truncated while reading string");
    }
    return s;
}

inline void write_doubles(std::ostream& os, std::span<const double> v) {
    write_u64(os, v.size());
    for (double d : v) write_f64(os, d);
}

inline std::vector<double> read_doubles(std::istream& is) {
    const std::uint64_t count = read_u64(is);
    std::vector<double> v(count);
    for (auto& d : v) d = read_f64(is);
    return v;
}

inline void write_tensor(std::ostream& os, const Tensor4& t) {
    const auto& s = t.shape();
    write_u64(os, s.d0);
    write_u64(os, s.d1);
    write_u64(os, s.d2);
    write_u64(os, s.d3);
    for (double d : t.flat()) write_f64(os, d);
}

inline Tensor4 read_tensor(std::istream& is) {
    Shape4 s;
    s.d0 = read_u64(is);
    s.d1 = read_u64(is);
    s.d2 = read_u64(is);
    s.d3 = read_u64(is);
    Tensor4 t(s);
    for (double& d : t.flat()) d = read_f64(is);
    return t;
}

}  // namespace lsrs::ser
