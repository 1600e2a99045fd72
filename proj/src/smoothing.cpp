#include "lsrs/smoothing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lsrs/stats.hpp"

namespace lsrs {

void SmoothingConfig::validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("smoothing config: sigma must be >= 0");
    if (n0 < 1) throw std::invalid_argument("smoothing config: n0 must be >= 1");
    if (n < 1) throw std::invalid_argument("smoothing config: n must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("smoothing config: alpha must lie in (0, 1)");
    }
    if (batch_size == 0) throw std::invalid_argument("smoothing config: batch_size must be >= 1");
}

namespace {

Tensor4 tile_example(const Tensor4& x, std::size_t copies) {
    const Shape3 es = x.example_shape();
    Tensor4 out({copies, es.c, es.h, es.w});
    const auto src = x.example(0);
    for (std::size_t b = 0; b < copies; ++b) {
        auto dst = out.example(b);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

std::size_t argmax_span(std::span<const double> s) {
    return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

std::size_t argmax_counts(const std::vector<std::uint64_t>& counts) {
    return static_cast<std::size_t>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

std::vector<std::uint64_t> sample_counts(const SplitNetwork& net, const Tensor4& x, Mode mode,
                                         const SmoothingConfig& cfg, std::size_t m, Rng& rng) {
    cfg.validate();
    if (m < 1) throw std::invalid_argument("sample_counts: m must be >= 1");
    if (x.shape().d0 != 1 || x.example_shape() != net.input_shape()) {
        throw std::invalid_argument("sample_counts: expected a single example of shape " +
                                    to_string(net.input_shape()) + ", got " +
                                    to_string(x.shape()));
    }

    const std::size_t split = (mode == Mode::LS_RS) ? net.split_index() : 0;
    // The one encoder pass of LS_RS; for IS_RS the "latent" is the input
    // itself and the whole net runs per sample.
    const Tensor4 base = (mode == Mode::LS_RS) ? net.encode(x) : x;

    std::vector<std::uint64_t> counts(net.n_classes(), 0);
    std::size_t done = 0;
    while (done < m) {
        const std::size_t bs = std::min(cfg.batch_size, m - done);
        Tensor4 batch = tile_example(base, bs);
        batch += gaussian_sample(batch.shape(), cfg.sigma, rng);
        const Tensor4 scores = net.forward_range(batch, split, net.layer_count());
        for (std::size_t b = 0; b < bs; ++b) ++counts[argmax_span(scores.example(b))];
        done += bs;
    }
    return counts;
}

CertResult certify(const SplitNetwork& net, const Tensor4& x, Mode mode,
                   const SmoothingConfig& cfg, std::uint64_t example_index) {
    cfg.validate();
    Rng rng(cfg.seed, example_index);
    const auto t0 = std::chrono::steady_clock::now();

    const std::vector<std::uint64_t> selection = sample_counts(net, x, mode, cfg, cfg.n0, rng);
    const std::size_t candidate = argmax_counts(selection);

    CertResult result;
    result.candidate = static_cast<int>(candidate);
    result.counts = sample_counts(net, x, mode, cfg, cfg.n, rng);
    const std::uint64_t k = result.counts[candidate];
    result.p_lower = clopper_pearson_lower(static_cast<std::int64_t>(k),
                                           static_cast<std::int64_t>(cfg.n), cfg.alpha);
    if (result.p_lower > 0.5) {
        result.predicted = static_cast<int>(candidate);
        result.radius_latent = cfg.sigma * std_normal_quantile(result.p_lower);
    }
    result.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    result.lipschitz_used = (mode == Mode::LS_RS) ? net.encoder_lipschitz_bound() : 1.0;
    result.radius_input = result.radius_latent / result.lipschitz_used;
    return result;
}

int predict(const SplitNetwork& net, const Tensor4& x, Mode mode, const SmoothingConfig& cfg,
            std::uint64_t example_index) {
    cfg.validate();
    Rng rng(cfg.seed, example_index);
    const std::vector<std::uint64_t> counts = sample_counts(net, x, mode, cfg, cfg.n, rng);

    const std::size_t top = argmax_counts(counts);
    std::uint64_t runner_count = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (c != top) runner_count = std::max(runner_count, counts[c]);
    }
    const double p_value =
        binomial_two_sided_p(static_cast<std::int64_t>(counts[top]),
                             static_cast<std::int64_t>(counts[top] + runner_count));
    return p_value <= cfg.alpha ? static_cast<int>(top) : kAbstain;
}

double two_sided_radius(double pa, double pb, double sigma) {
    if (!(sigma >= 0.0)) throw std::domain_error("two_sided_radius: sigma must be >= 0");
    if (!(pa <= 1.0 && pa >= pb && pb >= 0.0)) {
        throw std::domain_error("two_sided_radius: need 1 >= pa >= pb >= 0");
    }
    if (!(pa > 0.0)) throw std::domain_error("two_sided_radius: pa must be positive");
    if (!(pb < 1.0)) throw std::domain_error("two_sided_radius: pb must be below one");
    if (pb == 1.0 - pa) {
        if (pa == 1.0) return std::numeric_limits<double>::infinity();
        return sigma * std_normal_quantile(pa);
    }
    if (pa + pb > 1.0) throw std::domain_error("two_sided_radius: pa + pb must not exceed 1");

    const double qa =
        pa == 1.0 ? std::numeric_limits<double>::infinity() : std_normal_quantile(pa);
    const double qb =
        pb == 0.0 ? -std::numeric_limits<double>::infinity() : std_normal_quantile(pb);
    return 0.5 * sigma * (qa - qb);
}

}  // namespace lsrs
