#include "lsrs/network.hpp"

#include <fstream>
#include <stdexcept>

#include "serialize.hpp"

namespace lsrs {

namespace {
constexpr std::uint64_t kCheckpointMagic = 0x4c53525343504b54ULL;  // "LSRSCPKT"
constexpr std::uint64_t kCheckpointVersion = 1;
}  // namespace

SplitNetwork::SplitNetwork(Shape3 input_shape, std::vector<std::unique_ptr<Layer>> layers,
                           std::size_t split_index,
                           std::pair<std::size_t, std::size_t> block_fraction)
    : input_shape_(input_shape),
      layers_(std::move(layers)),
      split_(split_index),
      blocks_(block_fraction) {
    if (split_ > layers_.size()) {
        throw std::invalid_argument("network: split index " + std::to_string(split_) +
                                    " exceeds layer count " + std::to_string(layers_.size()));
    }
    recompute_shapes();
}

void SplitNetwork::recompute_shapes() {
    shapes_.clear();
    shapes_.reserve(layers_.size() + 1);
    Shape3 s = input_shape_;
    shapes_.push_back(s);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            s = layers_[i]->out_shape(s);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("network: layer " + std::to_string(i) + " (" +
                                        layers_[i]->kind() + "): " + e.what());
        }
        shapes_.push_back(s);
    }
}

void SplitNetwork::set_split_index(std::size_t split) {
    if (split > layers_.size()) {
        throw std::invalid_argument("network: split index " + std::to_string(split) +
                                    " exceeds layer count " + std::to_string(layers_.size()));
    }
    split_ = split;
}

Tensor4 SplitNetwork::forward_range(const Tensor4& x, std::size_t begin, std::size_t end) const {
    Tensor4 cur = x;
    for (std::size_t i = begin; i < end; ++i) cur = layers_[i]->forward(cur);
    return cur;
}

Tensor4 SplitNetwork::encode(const Tensor4& x) const {
    ++encoder_forwards_;
    return forward_range(x, 0, split_);
}

Tensor4 SplitNetwork::classify_latent(const Tensor4& z) const {
    return forward_range(z, split_, layers_.size());
}

std::pair<Tensor4, Tensor4> SplitNetwork::forward(const Tensor4& x) const {
    Tensor4 latent = encode(x);
    Tensor4 scores = classify_latent(latent);
    return {std::move(latent), std::move(scores)};
}

Tensor4 SplitNetwork::forward_taped_range(const Tensor4& x, std::size_t begin, std::size_t end,
                                          std::vector<TapeNode>& tapes) const {
    tapes.assign(end - begin, TapeNode{});
    Tensor4 cur = x;
    for (std::size_t i = begin; i < end; ++i) {
        cur = layers_[i]->forward_taped(cur, tapes[i - begin]);
    }
    return cur;
}

Tensor4 SplitNetwork::backward_range(const Tensor4& grad, std::size_t begin, std::size_t end,
                                     const std::vector<TapeNode>& tapes,
                                     bool accumulate_param_grads) {
    if (tapes.size() != end - begin) {
        throw std::logic_error("network: tape count " + std::to_string(tapes.size()) +
                               " does not cover layer range of " + std::to_string(end - begin));
    }
    Tensor4 cur = grad;
    for (std::size_t i = end; i-- > begin;) {
        cur = layers_[i]->backward(cur, tapes[i - begin], accumulate_param_grads);
    }
    return cur;
}

Tensor4 SplitNetwork::encoder_jvp(const Tensor4& dx, const std::vector<TapeNode>& tapes) const {
    if (tapes.size() < split_) {
        throw std::logic_error("network: encoder jvp needs tapes for all encoder layers");
    }
    Tensor4 cur = dx;
    for (std::size_t i = 0; i < split_; ++i) cur = layers_[i]->jvp(cur, tapes[i]);
    return cur;
}

double SplitNetwork::encoder_lipschitz_bound() const {
    double product = 1.0;
    for (std::size_t i = 0; i < split_; ++i) {
        const auto b = layers_[i]->lipschitz_bound();
        if (!b) {
            throw std::runtime_error("network: encoder layer " + std::to_string(i) + " (" +
                                     layers_[i]->kind() + ") declares no Lipschitz bound");
        }
        product *= *b;
    }
    return product;
}

void SplitNetwork::collect_params(std::vector<ParamRef>& out) {
    for (auto& l : layers_) l->collect_params(out);
}

void SplitNetwork::init_params(Rng& rng) {
    for (auto& l : layers_) l->init_params(rng);
}

void SplitNetwork::zero_grads() {
    for (auto& l : layers_) l->zero_grads();
}

void SplitNetwork::after_update() {
    for (auto& l : layers_) l->after_update();
}

SplitNetwork SplitNetwork::clone() const {
    std::vector<std::unique_ptr<Layer>> copies;
    copies.reserve(layers_.size());
    for (const auto& l : layers_) copies.push_back(l->clone());
    return SplitNetwork(input_shape_, std::move(copies), split_, blocks_);
}

void SplitNetwork::save(std::ostream& os) const {
    ser::write_u64(os, kCheckpointMagic);
    ser::write_u64(os, kCheckpointVersion);
    ser::write_u64(os, input_shape_.c);
    ser::write_u64(os, input_shape_.h);
    ser::write_u64(os, input_shape_.w);
    ser::write_u64(os, split_);
    ser::write_u64(os, blocks_.first);
    ser::write_u64(os, blocks_.second);
    ser::write_u64(os, layers_.size());
    for (const auto& l : layers_) save_layer(os, *l);
}

SplitNetwork SplitNetwork::load(std::istream& is) {
    if (ser::read_u64(is) != kCheckpointMagic) {
        throw std::runtime_error("checkpoint: bad magic");
    }
    const std::uint64_t version = ser::read_u64(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    Shape3 input_shape;
    input_shape.c = ser::read_u64(is);
    input_shape.h = ser::read_u64(is);
    input_shape.w = ser::read_u64(is);
    const std::uint64_t split = ser::read_u64(is);
    std::pair<std::size_t, std::size_t> blocks;
    blocks.first = ser::read_u64(is);
    blocks.second = ser::read_u64(is);
    const std::uint64_t count = ser::read_u64(is);
    std::vector<std::unique_ptr<Layer>> layers;
    layers.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) layers.push_back(load_layer(is));
    return SplitNetwork(input_shape, std::move(layers), split, blocks);
}

void SplitNetwork::save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    save(os);
    os.flush();
    if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

SplitNetwork SplitNetwork::load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    return load(is);
}

}  // namespace lsrs
