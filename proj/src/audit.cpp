#include "lsrs/audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace lsrs {

std::string AuditReport::text() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "encoder audit\n"
                  "  declared bound      %.12g\n"
                  "  max pairwise ratio  %.12g\n"
                  "  max jacobian norm   %.12g\n"
                  "  attack violations   %zu\n"
                  "  tolerance           %.3g\n"
                  "  verdict             %s\n",
                  declared_bound, max_pairwise_ratio, max_jacobian_norm, attack_violations, tol,
                  passes() ? "PASS" : "FAIL");
    return buf;
}

std::string AuditReport::csv_header() {
    return "declared_bound, max_pairwise_ratio, max_jacobian_norm, attack_violations, tol, passes";
}

std::string AuditReport::csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.17g, %.17g, %.17g, %zu, %.17g, %d", declared_bound,
                  max_pairwise_ratio, max_jacobian_norm, attack_violations, tol,
                  passes() ? 1 : 0);
    return buf;
}

namespace {

Tensor4 random_input(const Shape3& s, Rng& rng) {
    Tensor4 x({1, s.c, s.h, s.w});
    for (double& v : x.flat()) v = rng.uniform01();
    return x;
}

Tensor4 random_direction(const Shape4& s, Rng& rng) {
    Tensor4 d(s);
    for (double& v : d.flat()) v = rng.gaussian();
    return d;
}

}  // namespace

double pairwise_lipschitz_probe(SplitNetwork& net, std::size_t n_pairs, double scale,
                                std::uint64_t seed) {
    if (n_pairs < 1) throw std::invalid_argument("pairwise probe: n_pairs must be >= 1");
    if (!(scale > 0.0)) throw std::invalid_argument("pairwise probe: scale must be positive");
    Rng rng(seed, 0x70616972);
    const std::size_t split = net.split_index();
    const double magnitudes[3] = {scale, 0.1 * scale, 0.01 * scale};

    double worst = 0.0;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        const Tensor4 x = random_input(net.input_shape(), rng);
        const Tensor4 zx = net.forward_range(x, 0, split);
        for (const double m : magnitudes) {
            Tensor4 delta = random_direction(x.shape(), rng);
            const double dn0 = delta.fro_norm();
            if (dn0 == 0.0) continue;
            delta *= m / dn0;
            // Power-style sharpening: push delta toward the direction that
            // grows ||f_e(x + delta) - f_e(x)|| fastest at this magnitude.
            for (int step = 0; step < 3; ++step) {
                Tensor4 xp = x;
                xp += delta;
                const double in_dist = l2_distance(xp, x);
                if (in_dist == 0.0) break;
                std::vector<TapeNode> tapes;
                const Tensor4 zp = net.forward_taped_range(xp, 0, split, tapes);
                Tensor4 g = zp;
                g -= zx;
                worst = std::max(worst, l2_distance(zp, zx) / in_dist);
                const Tensor4 d = net.backward_range(g, 0, split, tapes, false);
                const double dn = d.fro_norm();
                if (dn == 0.0) break;
                delta = d;
                delta *= m / dn;
            }
        }
    }
    return worst;
}

double jacobian_spectral_norm(SplitNetwork& net, const Tensor4& x, std::size_t iters,
                              std::uint64_t seed) {
    if (iters < 1) throw std::invalid_argument("jacobian norm: iters must be >= 1");
    if (x.shape().d0 != 1 || x.example_shape() != net.input_shape()) {
        throw std::invalid_argument("jacobian norm: expected one example of shape " +
                                    to_string(net.input_shape()));
    }
    const std::size_t split = net.split_index();
    std::vector<TapeNode> tapes;
    net.forward_taped_range(x, 0, split, tapes);

    Rng rng(seed, 0x6a616370);
    for (int attempt = 0; attempt < 4; ++attempt) {
        Tensor4 v = random_direction(x.shape(), rng);
        const double vn = v.fro_norm();
        if (vn == 0.0) continue;
        v *= 1.0 / vn;
        double sigma = 0.0;
        bool collapsed = false;
        for (std::size_t it = 0; it < iters; ++it) {
            const Tensor4 w = net.encoder_jvp(v, tapes);
            const double wn = w.fro_norm();
            if (!(wn > 0.0)) {
                collapsed = true;
                break;
            }
            sigma = wn;
            Tensor4 u = net.backward_range(w, 0, split, tapes, false);
            const double un = u.fro_norm();
            if (!(un > 0.0)) {
                collapsed = true;
                break;
            }
            u *= 1.0 / un;
            v = std::move(u);
        }
        if (!collapsed) return sigma;
    }
    // Every restart collapsed: the Jacobian annihilates random vectors, so
    // report the zero map.
    return 0.0;
}

std::size_t certified_ball_attack(const SplitNetwork& net, const Tensor4& x,
                                  const CertResult& cert, Mode mode, const SmoothingConfig& cfg,
                                  std::size_t n_restarts) {
    if (cert.predicted == kAbstain) {
        throw std::invalid_argument("ball attack: certification abstained, nothing to attack");
    }
    if (x.shape().d0 != 1 || x.example_shape() != net.input_shape()) {
        throw std::invalid_argument("ball attack: expected one example of shape " +
                                    to_string(net.input_shape()));
    }
    const double radius = 0.999 * cert.radius_input;
    const std::size_t pred = static_cast<std::size_t>(cert.predicted);
    Rng dir_rng(cfg.seed, 0x61747463);
    std::uint64_t vote_tag = 0;

    // Majority vote of the smoothed classifier at xp; never abstains.
    // Returns (class, margin of the certified class over its best rival).
    const auto vote = [&](const Tensor4& xp) -> std::pair<std::size_t, double> {
        Rng vote_rng(cfg.seed ^ 0x766f7465u, vote_tag++);
        const std::vector<std::uint64_t> counts =
            sample_counts(net, xp, mode, cfg, cfg.n, vote_rng);
        const std::size_t top = static_cast<std::size_t>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        std::uint64_t rival = 0;
        for (std::size_t c = 0; c < counts.size(); ++c) {
            if (c != pred) rival = std::max(rival, counts[c]);
        }
        const double margin =
            (static_cast<double>(counts[pred]) - static_cast<double>(rival)) /
            static_cast<double>(cfg.n);
        return {top, margin};
    };

    std::size_t violations = 0;
    Tensor4 weakest_delta(x.shape());
    double weakest_margin = 0.0;
    {
        const auto [cls, margin] = vote(x);
        if (cls != pred) ++violations;
        weakest_margin = margin;
    }

    for (std::size_t r = 0; r < n_restarts; ++r) {
        Tensor4 delta = random_direction(x.shape(), dir_rng);
        const double dn = delta.fro_norm();
        if (dn == 0.0) continue;
        delta *= radius / dn;
        Tensor4 xp = x;
        xp += delta;
        const auto [cls, margin] = vote(xp);
        if (cls != pred) ++violations;
        if (margin < weakest_margin) {
            weakest_margin = margin;
            weakest_delta = delta;
        }
    }

    // Greedy refinement around the weakest candidate seen so far.
    for (int round = 0; round < 2 && n_restarts > 0; ++round) {
        Tensor4 delta = random_direction(x.shape(), dir_rng);
        const double dn = delta.fro_norm();
        if (dn == 0.0) continue;
        delta *= 0.5 / dn;
        delta.add_scaled(1.0 / std::max(radius, 1e-300), weakest_delta);
        const double mixed = delta.fro_norm();
        if (mixed == 0.0) continue;
        delta *= radius / mixed;
        Tensor4 xp = x;
        xp += delta;
        const auto [cls, margin] = vote(xp);
        if (cls != pred) ++violations;
        if (margin < weakest_margin) {
            weakest_margin = margin;
            weakest_delta = delta;
        }
    }
    return violations;
}

AuditReport audit_encoder(SplitNetwork& net, std::size_t n_pairs, std::size_t n_points,
                          std::size_t power_iters, std::uint64_t seed) {
    AuditReport report;
    report.declared_bound = net.encoder_lipschitz_bound();
    report.max_pairwise_ratio = pairwise_lipschitz_probe(net, n_pairs, 0.5, seed);
    Rng rng(seed, 0x6a707473);
    for (std::size_t i = 0; i < n_points; ++i) {
        const Tensor4 x = random_input(net.input_shape(), rng);
        report.max_jacobian_norm = std::max(
            report.max_jacobian_norm, jacobian_spectral_norm(net, x, power_iters, seed + i));
    }
    return report;
}

}  // namespace lsrs
