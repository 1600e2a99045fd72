#pragma once

#include <cstdint>
#include <vector>

#include "lsrs/network.hpp"
#include "lsrs/rng.hpp"
#include "lsrs/tensor.hpp"

namespace lsrs {

// Where the smoothing noise lives: IS_RS adds xi ~ N(0, sigma^2 I) to the raw
// input; LS_RS adds it to the latent z = f_e(x), paying the encoder once per
// example and only the classifier per sample.
enum class Mode { IS_RS, LS_RS };

inline constexpr int kAbstain = -1;

struct SmoothingConfig {
    double sigma = 0.25;
    std::size_t n0 = 100;      // selection round
    std::size_t n = 10000;     // estimation round
    double alpha = 0.001;      // confidence failure probability
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CertResult {
    int predicted = kAbstain;
    // Class the selection round picked; the confidence bound below refers to
    // it even when the final answer is ABSTAIN.
    int candidate = kAbstain;
    double p_lower = 0.0;
    // Certified radius in the smoothed space. For LS_RS that is the latent
    // space; for IS_RS the smoothed space is the input space, so the two
    // radii coincide.
    double radius_latent = 0.0;
    double radius_input = 0.0;
    double lipschitz_used = 1.0;
    double elapsed_s = 0.0;
    std::vector<std::uint64_t> counts;  // estimation-round tallies per class
};

// Draws m noisy samples around the single example x and tallies the
// predicted class of each. Both modes share one code path: the noise enters
// after layer `split` (0 for IS_RS), so split_index 0 makes the modes
// bit-identical under a shared generator state. LS_RS runs the encoder
// exactly once.
std::vector<std::uint64_t> sample_counts(const SplitNetwork& net, const Tensor4& x, Mode mode,
                                         const SmoothingConfig& cfg, std::size_t m, Rng& rng);

// Certification: selection round (n0 draws) picks the candidate class, the
// estimation round (n fresh draws) lower-bounds its probability by
// Clopper-Pearson at level alpha, and the radius follows as
// sigma * quantile(p_lower) in the smoothed space, divided by the encoder
// bound L for the input-space guarantee. p_lower <= 1/2 abstains with radius
// 0. Noise is drawn from a stream derived from (cfg.seed, example_index), so
// per-example results do not depend on evaluation order. elapsed_s covers
// sampling + bound computation.
CertResult certify(const SplitNetwork& net, const Tensor4& x, Mode mode,
                   const SmoothingConfig& cfg, std::uint64_t example_index = 0);

// Prediction without a radius: n draws, then a two-sided binomial test on
// the top-two counts at level alpha; ABSTAIN when equality cannot be
// rejected.
int predict(const SplitNetwork& net, const Tensor4& x, Mode mode, const SmoothingConfig& cfg,
            std::uint64_t example_index = 0);

// Two-sided certified radius (sigma/2) * (quantile(pa) - quantile(pb)).
// Requires 1 >= pa >= pb >= 0, pa > 0, pb < 1, pa + pb <= 1. The
// complementary case pb = 1 - pa reduces analytically (quantile
// antisymmetry) to sigma * quantile(pa), which keeps the identity with
// certify's one-term radius exact; the degenerate corners pa = 1 or pb = 0
// yield an infinite radius.
double two_sided_radius(double pa, double pb, double sigma);

}  // namespace lsrs
