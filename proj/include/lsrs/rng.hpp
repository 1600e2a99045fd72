#pragma once

#include <cstdint>
#include <random>

#include "lsrs/tensor.hpp"

namespace lsrs {

// Seedable generator with independent substreams. The state is a
// std::mt19937_64 (bit-reproducible across platforms per the standard) seeded
// by splitmix64-mixing (seed, stream). Gaussians come from a hand-rolled
// Box-Muller so draws do not depend on the library's distribution
// implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64() { return gen_(); }
    // in [0,1), 53-bit resolution
    double uniform01();
    // standard normal
    double gaussian();
    // uniform integer in [0, n)
    std::uint64_t uniform_below(std::uint64_t n);

    static std::uint64_t splitmix64(std::uint64_t& state);

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// i.i.d. N(0, sigma^2) entries; sigma = 0 yields the zero tensor.
// Throws std::invalid_argument for negative sigma.
Tensor4 gaussian_sample(const Shape4& shape, double sigma, Rng& rng);

}  // namespace lsrs
