#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "lsrs/layers.hpp"
#include "lsrs/network.hpp"
#include "lsrs/rng.hpp"

using lsrs::Layer;
using lsrs::Shape3;
using lsrs::Shape4;
using lsrs::SplitNetwork;
using lsrs::Tensor4;

namespace {

Tensor4 random_tensor(const Shape4& s, std::uint64_t seed) {
    lsrs::Rng rng(seed);
    Tensor4 t(s);
    for (double& v : t.flat()) v = 2.0 * rng.uniform01() - 1.0;
    return t;
}

std::unique_ptr<Layer> ortho_block(std::size_t channels, std::size_t size) {
    std::vector<std::unique_ptr<Layer>> main;
    main.push_back(std::make_unique<lsrs::OrthoConvLayer>(channels, size));
    main.push_back(std::make_unique<lsrs::GroupSortLayer>(2));
    return std::make_unique<lsrs::ResidualBlock>(std::move(main), true);
}

// Small end-to-end model: 2-channel 4x4 input, orthogonal encoder of depth
// `blocks`, dense classifier head.
SplitNetwork make_model(std::size_t blocks, std::uint64_t seed) {
    std::vector<std::unique_ptr<Layer>> layers;
    for (std::size_t k = 0; k < blocks; ++k) layers.push_back(ortho_block(2, 4));
    const std::size_t split = layers.size();
    layers.push_back(std::make_unique<lsrs::DenseLayer>(32, 8));
    layers.push_back(std::make_unique<lsrs::ReluLayer>());
    layers.push_back(std::make_unique<lsrs::DenseLayer>(8, 3));
    SplitNetwork net({2, 4, 4}, std::move(layers), split, {blocks, blocks});
    lsrs::Rng rng(seed);
    net.init_params(rng);
    return net;
}

}  // namespace

TEST_SUITE("split_network") {

TEST_CASE("shapes propagate through a mixed stack") {
    std::vector<std::unique_ptr<Layer>> layers;
    layers.push_back(std::make_unique<lsrs::ChannelLiftLayer>(1, 4));
    layers.push_back(std::make_unique<lsrs::OrthoConvLayer>(4, 8));
    layers.push_back(std::make_unique<lsrs::GroupSortLayer>(2));
    layers.push_back(std::make_unique<lsrs::DenseLayer>(256, 10));
    SplitNetwork net({1, 8, 8}, std::move(layers), 3);

    CHECK(net.shape_at(0) == Shape3{1, 8, 8});
    CHECK(net.shape_at(1) == Shape3{4, 8, 8});
    CHECK(net.shape_at(2) == Shape3{4, 8, 8});
    CHECK(net.shape_at(3) == Shape3{4, 8, 8});
    CHECK(net.latent_shape() == Shape3{4, 8, 8});
    CHECK(net.output_shape() == Shape3{10, 1, 1});
    CHECK(net.n_classes() == 10);

    const Tensor4 x = random_tensor({2, 1, 8, 8}, 1);
    const auto [z, scores] = net.forward(x);
    CHECK(z.shape() == Shape4{2, 4, 8, 8});
    CHECK(scores.shape() == Shape4{2, 10, 1, 1});
}

TEST_CASE("split zero makes the encoder the identity") {
    SplitNetwork net = make_model(2, 7);
    net.set_split_index(0);
    const Tensor4 x = random_tensor({3, 2, 4, 4}, 2);
    const Tensor4 z = net.encode(x);
    REQUIRE(z.shape() == x.shape());
    for (std::size_t k = 0; k < x.numel(); ++k) CHECK(z[k] == x[k]);
    CHECK(net.latent_shape() == net.input_shape());
}

TEST_CASE("freshly constructed orthogonal encoder starts at the identity") {
    // Zero Cayley weights and alpha raw = 0 mean each block is a convex mix
    // of x with groupsort(x); with untrained weights the conv is the identity
    // so only the sort reorders features. Use a presorted input to pin z = x.
    std::vector<std::unique_ptr<Layer>> layers;
    layers.push_back(std::make_unique<lsrs::OrthoConvLayer>(2, 4));
    SplitNetwork net({2, 4, 4}, std::move(layers), 1);
    const Tensor4 x = random_tensor({2, 2, 4, 4}, 3);
    const Tensor4 z = net.encode(x);
    double diff = 0.0;
    for (std::size_t k = 0; k < x.numel(); ++k) diff = std::max(diff, std::abs(z[k] - x[k]));
    CHECK(diff < 1e-8);
}

TEST_CASE("encoder bound multiplies declared layer bounds") {
    SUBCASE("orthogonal stack declares exactly one") {
        const SplitNetwork net = make_model(3, 11);
        CHECK(net.encoder_lipschitz_bound() == 1.0);
    }
    SUBCASE("a scale layer enters the product") {
        std::vector<std::unique_ptr<Layer>> layers;
        layers.push_back(ortho_block(2, 4));
        layers.push_back(std::make_unique<lsrs::ScaleLayer>(3.0));
        layers.push_back(std::make_unique<lsrs::DenseLayer>(32, 4));
        SplitNetwork net({2, 4, 4}, std::move(layers), 2);
        CHECK(net.encoder_lipschitz_bound() == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("empty encoder gives the empty product") {
        SplitNetwork net = make_model(2, 12);
        net.set_split_index(0);
        CHECK(net.encoder_lipschitz_bound() == 1.0);
    }
    SUBCASE("unbounded layer in the encoder is reported by index and kind") {
        std::vector<std::unique_ptr<Layer>> layers;
        layers.push_back(ortho_block(2, 4));
        layers.push_back(std::make_unique<lsrs::DenseLayer>(32, 4));
        SplitNetwork net({2, 4, 4}, std::move(layers), 2);
        CHECK_THROWS_WITH_AS(net.encoder_lipschitz_bound(),
                             doctest::Contains("layer 1 (dense)"), std::runtime_error);
    }
}

TEST_CASE("linear orthogonal stack preserves pairwise distances") {
    std::vector<std::unique_ptr<Layer>> layers;
    for (int k = 0; k < 3; ++k) layers.push_back(std::make_unique<lsrs::OrthoConvLayer>(2, 4));
    SplitNetwork net({2, 4, 4}, std::move(layers), 3);
    lsrs::Rng rng(21);
    net.init_params(rng);
    for (int pair = 0; pair < 1000; ++pair) {
        const Tensor4 x = random_tensor({1, 2, 4, 4}, 5000 + 2 * pair);
        const Tensor4 xp = random_tensor({1, 2, 4, 4}, 5001 + 2 * pair);
        const double in_dist = lsrs::l2_distance(x, xp);
        const double out_dist = lsrs::l2_distance(net.encode(x), net.encode(xp));
        CHECK(std::abs(out_dist / in_dist - 1.0) <= 1e-4);
    }
}

TEST_CASE("conv plus group sort stack preserves norms and local distances") {
    // Group sorting is a per-example permutation, so single-vector norms are
    // preserved exactly, and pairs close enough to share sort order keep
    // their distance too. Distant pairs may sort differently and contract;
    // those fall under the Lipschitz inequality, not the isometry.
    std::vector<std::unique_ptr<Layer>> layers;
    for (int k = 0; k < 2; ++k) {
        layers.push_back(std::make_unique<lsrs::OrthoConvLayer>(2, 4));
        layers.push_back(std::make_unique<lsrs::GroupSortLayer>(2));
    }
    SplitNetwork net({2, 4, 4}, std::move(layers), 4);
    lsrs::Rng rng(22);
    net.init_params(rng);

    lsrs::Rng dir_rng(220);
    for (int pair = 0; pair < 1000; ++pair) {
        const Tensor4 x = random_tensor({1, 2, 4, 4}, 9000 + pair);
        CHECK(std::abs(net.encode(x).fro_norm() / x.fro_norm() - 1.0) <= 1e-4);

        Tensor4 xp = x;
        for (double& v : xp.flat()) v += 1e-6 * dir_rng.gaussian();
        const double ratio = lsrs::l2_distance(net.encode(x), net.encode(xp)) /
                             lsrs::l2_distance(x, xp);
        CHECK(std::abs(ratio - 1.0) <= 1e-4);
    }
}

TEST_CASE("mixed residual encoder is 1-Lipschitz over 1000 pairs") {
    SplitNetwork net = make_model(3, 23);
    REQUIRE(net.encoder_lipschitz_bound() == 1.0);
    for (int pair = 0; pair < 1000; ++pair) {
        const Tensor4 x = random_tensor({1, 2, 4, 4}, 40000 + 2 * pair);
        const Tensor4 xp = random_tensor({1, 2, 4, 4}, 40001 + 2 * pair);
        const double ratio = lsrs::l2_distance(net.encode(x), net.encode(xp)) /
                             lsrs::l2_distance(x, xp);
        CHECK(ratio <= 1.0 + 1e-4);
    }
}

TEST_CASE("checkpoint round trip is bit identical") {
    SplitNetwork net = make_model(2, 31);
    std::ostringstream first;
    net.save(first);
    std::istringstream in(first.str());
    SplitNetwork back = SplitNetwork::load(in);
    std::ostringstream second;
    back.save(second);
    REQUIRE(first.str().size() == second.str().size());
    CHECK(first.str() == second.str());

    CHECK(back.split_index() == net.split_index());
    CHECK(back.input_shape() == net.input_shape());
    CHECK(back.block_fraction() == net.block_fraction());
    const Tensor4 x = random_tensor({2, 2, 4, 4}, 32);
    const auto [z1, s1] = net.forward(x);
    const auto [z2, s2] = back.forward(x);
    for (std::size_t k = 0; k < s1.numel(); ++k) CHECK(s1[k] == s2[k]);
    for (std::size_t k = 0; k < z1.numel(); ++k) CHECK(z1[k] == z2[k]);
}

TEST_CASE("load rejects corrupted streams") {
    SplitNetwork net = make_model(1, 33);
    std::ostringstream os;
    net.save(os);
    std::string bytes = os.str();
    SUBCASE("bad magic") {
        bytes[0] ^= 0xff;
        std::istringstream in(bytes);
        CHECK_THROWS_AS(SplitNetwork::load(in), std::runtime_error);
    }
    SUBCASE("truncated") {
        std::istringstream in(bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(SplitNetwork::load(in), std::runtime_error);
    }
}

TEST_CASE("clone is independent of the original") {
    SplitNetwork net = make_model(1, 41);
    SplitNetwork copy = net.clone();
    const Tensor4 x = random_tensor({1, 2, 4, 4}, 42);
    const auto [z1, s1] = net.forward(x);
    const auto [z2, s2] = copy.forward(x);
    for (std::size_t k = 0; k < s1.numel(); ++k) REQUIRE(s1[k] == s2[k]);

    std::vector<lsrs::ParamRef> params;
    copy.collect_params(params);
    REQUIRE(!params.empty());
    for (auto& p : params) {
        for (std::size_t k = 0; k < p.size; ++k) p.value[k] += 0.25;
    }
    copy.after_update();
    const auto [z3, s3] = net.forward(x);
    for (std::size_t k = 0; k < s1.numel(); ++k) CHECK(s3[k] == s1[k]);
}

TEST_CASE("encoder forward counter counts encode calls") {
    SplitNetwork net = make_model(1, 51);
    net.reset_encoder_forward_count();
    const Tensor4 x = random_tensor({2, 2, 4, 4}, 52);
    net.encode(x);
    net.encode(x);
    net.forward(x);
    CHECK(net.encoder_forward_count() == 3);
    net.classify_latent(net.encode(x));
    CHECK(net.encoder_forward_count() == 4);
    net.reset_encoder_forward_count();
    CHECK(net.encoder_forward_count() == 0);
}

TEST_CASE("split index is validated") {
    SplitNetwork net = make_model(2, 61);
    CHECK_THROWS_AS(net.set_split_index(net.layer_count() + 1), std::invalid_argument);
    CHECK_NOTHROW(net.set_split_index(net.layer_count()));
    net.set_split_index(0);
    CHECK(net.split_index() == 0);
}

TEST_CASE("shape mismatches are reported with the layer index") {
    std::vector<std::unique_ptr<Layer>> layers;
    layers.push_back(std::make_unique<lsrs::OrthoConvLayer>(2, 4));
    layers.push_back(std::make_unique<lsrs::DenseLayer>(16, 4));
    CHECK_THROWS_WITH_AS(
        SplitNetwork({2, 4, 4}, std::move(layers), 1, {0, 0}),
        doctest::Contains("layer 1 (dense)"), std::invalid_argument);
}

TEST_CASE("file round trip") {
    SplitNetwork net = make_model(1, 71);
    const std::string path = "ckpt_roundtrip.bin";
    net.save_file(path);
    SplitNetwork back = SplitNetwork::load_file(path);
    const Tensor4 x = random_tensor({1, 2, 4, 4}, 72);
    const auto [z1, s1] = net.forward(x);
    const auto [z2, s2] = back.forward(x);
    for (std::size_t k = 0; k < s1.numel(); ++k) CHECK(s1[k] == s2[k]);
    std::remove(path.c_str());
}

}  // TEST_SUITE
