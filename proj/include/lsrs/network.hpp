#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lsrs/layers.hpp"
#include "lsrs/tensor.hpp"

namespace lsrs {

// A feed-forward network cut at split_index: layers [0, split) form the
// encoder f_e, layers [split, end) the classifier f_c. The encoder's
// Lipschitz bound is the product of the declared per-layer bounds, so a stack
// of orthogonal / GroupSort / convex-residual layers certifies L = 1 exactly.
class SplitNetwork {
public:
    SplitNetwork() = default;
    SplitNetwork(Shape3 input_shape, std::vector<std::unique_ptr<Layer>> layers,
                 std::size_t split_index,
                 std::pair<std::size_t, std::size_t> block_fraction = {0, 0});

    SplitNetwork(SplitNetwork&&) = default;
    SplitNetwork& operator=(SplitNetwork&&) = default;

    std::size_t layer_count() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

    std::size_t split_index() const { return split_; }
    void set_split_index(std::size_t split);

    const Shape3& input_shape() const { return input_shape_; }
    // Shape entering layer i; index layer_count() gives the output shape.
    const Shape3& shape_at(std::size_t i) const { return shapes_[i]; }
    Shape3 latent_shape() const { return shapes_[split_]; }
    Shape3 output_shape() const { return shapes_.back(); }
    std::size_t n_classes() const { return output_shape().numel(); }

    // Declared (orthogonal blocks, total blocks) of the architecture.
    std::pair<std::size_t, std::size_t> block_fraction() const { return blocks_; }

    // Encoder forward. Bumps the instrumentation counter once per call.
    Tensor4 encode(const Tensor4& x) const;
    // Classifier forward from a latent batch.
    Tensor4 classify_latent(const Tensor4& z) const;
    // Full forward; returns (latent, scores).
    std::pair<Tensor4, Tensor4> forward(const Tensor4& x) const;

    // Untaped forward over layers [begin, end).
    Tensor4 forward_range(const Tensor4& x, std::size_t begin, std::size_t end) const;
    // Taped forward over layers [begin, end); tapes is resized to end-begin.
    Tensor4 forward_taped_range(const Tensor4& x, std::size_t begin, std::size_t end,
                                std::vector<TapeNode>& tapes) const;
    // Adjoint over the same range; accumulates parameter gradients when asked.
    Tensor4 backward_range(const Tensor4& grad, std::size_t begin, std::size_t end,
                           const std::vector<TapeNode>& tapes, bool accumulate_param_grads);

    // Directional derivative of the encoder at the taped point.
    Tensor4 encoder_jvp(const Tensor4& dx, const std::vector<TapeNode>& tapes) const;

    // Product of declared per-layer bounds over the encoder; throws
    // std::runtime_error naming the first layer without a declared bound.
    double encoder_lipschitz_bound() const;

    void collect_params(std::vector<ParamRef>& out);
    void init_params(Rng& rng);
    void zero_grads();
    void after_update();

    SplitNetwork clone() const;

    std::uint64_t encoder_forward_count() const { return encoder_forwards_; }
    void reset_encoder_forward_count() const { encoder_forwards_ = 0; }

    void save(std::ostream& os) const;
    static SplitNetwork load(std::istream& is);
    void save_file(const std::string& path) const;
    static SplitNetwork load_file(const std::string& path);

private:
    void recompute_shapes();

    Shape3 input_shape_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<Shape3> shapes_;
    std::size_t split_ = 0;
    std::pair<std::size_t, std::size_t> blocks_{0, 0};
    mutable std::uint64_t encoder_forwards_ = 0;
};

}  // namespace lsrs
