#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "lsrs/audit.hpp"

using namespace lsrs;

namespace {

SplitNetwork identity_encoder_net() {
    std::vector<std::unique_ptr<Layer>> ls;
    ls.push_back(std::make_unique<DenseLayer>(16, 2));
    SplitNetwork net({1, 4, 4}, std::move(ls), 0);
    Rng rng(0, 0);
    net.init_params(rng);
    return net;
}

SplitNetwork scale_encoder_net(double factor) {
    std::vector<std::unique_ptr<Layer>> ls;
    ls.push_back(std::make_unique<ScaleLayer>(factor));
    ls.push_back(std::make_unique<DenseLayer>(16, 2));
    SplitNetwork net({1, 4, 4}, std::move(ls), 1);
    Rng rng(0, 0);
    net.init_params(rng);
    return net;
}

SplitNetwork ortho_encoder_net(std::uint64_t seed, bool with_sort) {
    std::vector<std::unique_ptr<Layer>> ls;
    ls.push_back(std::make_unique<OrthoConvLayer>(2, 4));
    std::size_t split = 1;
    if (with_sort) {
        ls.push_back(std::make_unique<GroupSortLayer>(2));
        split = 2;
    }
    ls.push_back(std::make_unique<DenseLayer>(32, 2));
    SplitNetwork net({2, 4, 4}, std::move(ls), split);
    Rng rng(seed, 0);
    net.init_params(rng);
    return net;
}

// Diagonal linear encoder with singular values 1, 2, 3.
SplitNetwork diag_encoder_net() {
    std::vector<std::unique_ptr<Layer>> ls;
    ls.push_back(std::make_unique<DenseLayer>(3, 3));
    ls.push_back(std::make_unique<DenseLayer>(3, 2));
    SplitNetwork net({1, 1, 3}, std::move(ls), 1);
    std::vector<ParamRef> ps;
    net.collect_params(ps);
    // first block is the 3x3 weight of the encoder layer
    REQUIRE(ps[0].size == 9);
    std::fill(ps[0].value, ps[0].value + 9, 0.0);
    ps[0].value[0] = 1.0;
    ps[0].value[4] = 2.0;
    ps[0].value[8] = 3.0;
    std::fill(ps[1].value, ps[1].value + ps[1].size, 0.0);
    net.after_update();
    return net;
}

Tensor4 unit_input(const SplitNetwork& net, std::uint64_t seed) {
    const Shape3 s = net.input_shape();
    Tensor4 x({1, s.c, s.h, s.w});
    Rng rng(seed, 55);
    for (double& v : x.flat()) v = rng.uniform01();
    return x;
}

}  // namespace

TEST_SUITE("audit") {
    TEST_CASE("pairwise probe of the identity encoder is exactly one") {
        SplitNetwork net = identity_encoder_net();
        CHECK(pairwise_lipschitz_probe(net, 5, 0.5, 1) == 1.0);
    }

    TEST_CASE("pairwise probe recovers a scalar gain") {
        SplitNetwork net = scale_encoder_net(3.0);
        CHECK(pairwise_lipschitz_probe(net, 10, 0.5, 2) == doctest::Approx(3.0).epsilon(1e-9));
    }

    TEST_CASE("pairwise probe of an orthogonal sort stack stays within 1e-4 of one") {
        SplitNetwork net = ortho_encoder_net(5, true);
        const double r = pairwise_lipschitz_probe(net, 20, 0.5, 3);
        CHECK(r >= 1.0 - 1e-4);
        CHECK(r <= 1.0 + 1e-4);
    }

    TEST_CASE("pairwise probe argument checks") {
        SplitNetwork net = identity_encoder_net();
        CHECK_THROWS_AS(pairwise_lipschitz_probe(net, 0, 0.5, 1), std::invalid_argument);
        CHECK_THROWS_AS(pairwise_lipschitz_probe(net, 3, 0.0, 1), std::invalid_argument);
    }

    TEST_CASE("power iteration on an orthogonal encoder gives one") {
        SplitNetwork net = ortho_encoder_net(9, false);
        Tensor4 x = unit_input(net, 1);
        CHECK(jacobian_spectral_norm(net, x, 50, 4) == doctest::Approx(1.0).epsilon(1e-5));
    }

    TEST_CASE("power iteration recovers a scalar gain") {
        SplitNetwork net = scale_encoder_net(2.5);
        Tensor4 x = unit_input(net, 2);
        CHECK(jacobian_spectral_norm(net, x, 50, 5) == doctest::Approx(2.5).epsilon(1e-6));
    }

    TEST_CASE("power iteration finds the top singular value of a diagonal map") {
        SplitNetwork net = diag_encoder_net();
        Tensor4 x = unit_input(net, 3);
        CHECK(jacobian_spectral_norm(net, x, 50, 6) == doctest::Approx(3.0).epsilon(1e-5));
    }

    TEST_CASE("power iteration reports zero for an annihilating encoder") {
        // Dense weights default to zero, so the encoder Jacobian vanishes.
        std::vector<std::unique_ptr<Layer>> ls;
        ls.push_back(std::make_unique<DenseLayer>(16, 16));
        ls.push_back(std::make_unique<DenseLayer>(16, 2));
        SplitNetwork net({1, 4, 4}, std::move(ls), 1);
        Tensor4 x = unit_input(net, 4);
        CHECK(jacobian_spectral_norm(net, x, 30, 7) == 0.0);
    }

    TEST_CASE("power iteration argument checks") {
        SplitNetwork net = identity_encoder_net();
        Tensor4 x = unit_input(net, 5);
        CHECK_THROWS_AS(jacobian_spectral_norm(net, x, 0, 0), std::invalid_argument);
        Tensor4 two({2, 1, 4, 4});
        CHECK_THROWS_AS(jacobian_spectral_norm(net, two, 10, 0), std::invalid_argument);
    }

    TEST_CASE("ball attack requires a non-abstaining certificate") {
        SplitNetwork net = identity_encoder_net();
        Tensor4 x = unit_input(net, 6);
        CertResult cert;  // defaults to ABSTAIN
        SmoothingConfig cfg;
        CHECK_THROWS_WITH_AS(certified_ball_attack(net, x, cert, Mode::IS_RS, cfg, 2),
                             doctest::Contains("nothing to attack"), std::invalid_argument);
    }

    TEST_CASE("ball attack finds no flip on a sound certificate") {
        // A constant classifier: W = 0, bias selects class 1. Any certificate
        // is vacuously sound.
        std::vector<std::unique_ptr<Layer>> ls;
        ls.push_back(std::make_unique<DenseLayer>(16, 2));
        SplitNetwork net({1, 4, 4}, std::move(ls), 0);
        std::vector<ParamRef> ps;
        net.collect_params(ps);
        std::fill(ps[0].value, ps[0].value + ps[0].size, 0.0);
        ps[1].value[0] = 0.0;
        ps[1].value[1] = 5.0;
        net.after_update();

        Tensor4 x = unit_input(net, 7);
        SmoothingConfig cfg;
        cfg.n0 = 20;
        cfg.n = 300;
        cfg.sigma = 0.25;
        CertResult cert = certify(net, x, Mode::IS_RS, cfg, 0);
        REQUIRE(cert.predicted == 1);
        REQUIRE(cert.radius_input > 0.0);
        CHECK(certified_ball_attack(net, x, cert, Mode::IS_RS, cfg, 5) == 0);
    }

    TEST_CASE("ball attack flips an overstated radius") {
        // Classifier with a decision boundary at zero, certified point at
        // x = 0.3. A fabricated radius of 1.0 reaches across the boundary,
        // so the majority vote must flip for some candidate.
        std::vector<std::unique_ptr<Layer>> ls;
        ls.push_back(std::make_unique<DenseLayer>(1, 2));
        SplitNetwork net({1, 1, 1}, std::move(ls), 0);
        std::vector<ParamRef> ps;
        net.collect_params(ps);
        ps[0].value[0] = 1.0;
        ps[0].value[1] = -1.0;
        ps[1].value[0] = 0.0;
        ps[1].value[1] = 0.0;
        net.after_update();

        Tensor4 x({1, 1, 1, 1});
        x.flat()[0] = 0.3;
        SmoothingConfig cfg;
        cfg.sigma = 0.05;
        cfg.n = 200;
        cfg.seed = 2;
        CertResult lie;
        lie.predicted = 0;
        lie.radius_latent = 1.0;
        lie.radius_input = 1.0;
        CHECK(certified_ball_attack(net, x, lie, Mode::IS_RS, cfg, 8) >= 1);
    }

    TEST_CASE("audit of a one-Lipschitz encoder passes") {
        SplitNetwork net = ortho_encoder_net(13, true);
        AuditReport report = audit_encoder(net, 15, 4, 40, 11);
        CHECK(report.declared_bound == 1.0);
        CHECK(report.max_pairwise_ratio <= 1.0 + 1e-3);
        CHECK(report.max_jacobian_norm <= 1.0 + 1e-3);
        CHECK(report.max_pairwise_ratio > 0.5);
        CHECK(report.max_jacobian_norm > 0.5);
        CHECK(report.attack_violations == 0);
        CHECK(report.passes());
        CHECK(report.text().find("PASS") != std::string::npos);
        const std::string header = AuditReport::csv_header();
        const std::string row = report.csv_row();
        CHECK(row.find("1") != std::string::npos);
        CHECK(std::count(header.begin(), header.end(), ',') == 5);
        CHECK(std::count(row.begin(), row.end(), ',') == 5);
    }

    TEST_CASE("report verdict tracks the tolerance band") {
        AuditReport r;
        r.declared_bound = 1.0;
        r.max_pairwise_ratio = 1.0009;
        r.max_jacobian_norm = 0.99;
        CHECK(r.passes());
        r.max_pairwise_ratio = 1.0011;
        CHECK_FALSE(r.passes());
        CHECK(r.text().find("FAIL") != std::string::npos);
        r.max_pairwise_ratio = 0.9;
        r.attack_violations = 1;
        CHECK_FALSE(r.passes());
    }
}
