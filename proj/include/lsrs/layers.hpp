#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lsrs/rng.hpp"
#include "lsrs/tensor.hpp"

namespace lsrs {

// Per-frequency Cayley transform of the spectral weights: for each spatial
// frequency f, A(f) = W~(f) - W~(f)^H and Q(f) = (I - A(f)) (I + A(f))^{-1}.
// Every Q(f) is unitary, so the induced circular convolution is an isometry.
// Requires square channel counts (c_out = c_in).
CTensor4 cayley_orthogonalize(const Tensor4& raw_weights);

// View onto one learnable parameter block and its gradient accumulator.
struct ParamRef {
    double* value = nullptr;
    double* grad = nullptr;
    std::size_t size = 0;
};

// Forward intermediates recorded for one layer application. Which fields are
// populated depends on the layer kind; residual blocks nest one node per
// main-branch layer.
struct TapeNode {
    Tensor4 input;
    CTensor4 spectral_in;
    std::vector<std::uint32_t> perm;
    Tensor4 main_out;
    double alpha = 0.0;
    std::vector<TapeNode> sub;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    // Output shape for a given per-example input shape; throws
    // std::invalid_argument on mismatch.
    virtual Shape3 out_shape(const Shape3& in) const = 0;

    virtual Tensor4 forward(const Tensor4& x) const = 0;
    // Forward that records the intermediates backward() needs.
    virtual Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const = 0;
    // Pulls grad_out back to grad_in; when accumulate_param_grads is set,
    // also adds this application's contribution to the parameter gradients.
    virtual Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                             bool accumulate_param_grads) = 0;
    // Directional derivative w.r.t. the input at the taped point (parameters
    // frozen, piecewise-linear layers use the taped activation pattern).
    virtual Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const = 0;

    // Declared Lipschitz bound in L2, or nullopt for unconstrained layers.
    virtual std::optional<double> lipschitz_bound() const { return std::nullopt; }

    virtual void collect_params(std::vector<ParamRef>&) {}
    virtual void init_params(Rng&) {}
    virtual void zero_grads() {}
    // Rebuilds any caches derived from the parameters; must be called after
    // every parameter update and before concurrent reads.
    virtual void after_update() {}

    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual void save(std::ostream& os) const = 0;
};

// Orthogonal circular convolution: y = ifft2(Q~(f) . fft2(x)(f)) with Q~ the
// Cayley transform of the spectral weights. Exactly norm-preserving up to
// roundoff. c_out = c_in, square spatial size.
class OrthoConvLayer final : public Layer {
public:
    OrthoConvLayer(std::size_t channels, std::size_t size);

    std::string kind() const override { return "ortho_conv"; }
    Shape3 out_shape(const Shape3& in) const override;
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    std::optional<double> lipschitz_bound() const override { return 1.0; }
    void collect_params(std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;
    void zero_grads() override;
    void after_update() override;
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<OrthoConvLayer> load(std::istream& is);

    const CTensor4& spectral_q() const { return q_; }
    const Tensor4& raw_weights() const { return raw_; }
    void set_raw_weights(const Tensor4& w);

    std::size_t channels() const { return raw_.shape().d0; }
    std::size_t size() const { return raw_.shape().d2; }

private:
    Tensor4 apply_spectral(const CTensor4& q, const Tensor4& x, double residue_tol) const;

    Tensor4 raw_;   // (c, c, n, n)
    Tensor4 grad_;
    CTensor4 q_;    // Cayley transform, per frequency
    CTensor4 s_;    // (I + A)^{-1}, kept for the adjoint
};

// Unconstrained circular convolution with bias, odd square kernels.
class PlainConvLayer final : public Layer {
public:
    PlainConvLayer(std::size_t c_out, std::size_t c_in, std::size_t kernel);

    std::string kind() const override { return "plain_conv"; }
    Shape3 out_shape(const Shape3& in) const override;
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    void collect_params(std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;
    void zero_grads() override;
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<PlainConvLayer> load(std::istream& is);

private:
    Tensor4 conv(const Tensor4& x, bool with_bias) const;

    Tensor4 kernel_;  // (c_out, c_in, k, k)
    Tensor4 kgrad_;
    std::vector<double> bias_;
    std::vector<double> bgrad_;
};

// Sorts each consecutive group of group_size flat features ascending.
// A per-example permutation, hence exactly norm-preserving.
class GroupSortLayer final : public Layer {
public:
    explicit GroupSortLayer(std::size_t group_size);

    std::string kind() const override { return "group_sort"; }
    Shape3 out_shape(const Shape3& in) const override;
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    std::optional<double> lipschitz_bound() const override { return 1.0; }
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<GroupSortLayer> load(std::istream& is);

    std::size_t group_size() const { return group_; }

private:
    Tensor4 scatter_inverse(const Tensor4& grad_out, const TapeNode& tape) const;

    std::size_t group_;
};

// y = alpha * main(x) + (1 - alpha) * x with alpha = sigmoid(raw), or the
// vanilla y = main(x) + x when convex is off. Main branch must preserve shape.
class ResidualBlock final : public Layer {
public:
    ResidualBlock(std::vector<std::unique_ptr<Layer>> main, bool convex);

    std::string kind() const override { return "residual"; }
    Shape3 out_shape(const Shape3& in) const override;
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    std::optional<double> lipschitz_bound() const override;
    void collect_params(std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;
    void zero_grads() override;
    void after_update() override;
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<ResidualBlock> load(std::istream& is);

    bool convex() const { return convex_; }
    double alpha() const;
    // Clamps to the sigmoid parameterization; a <= 0 or >= 1 saturates raw.
    void set_alpha(double a);
    std::size_t main_size() const { return main_.size(); }
    const Layer& main_layer(std::size_t i) const { return *main_[i]; }

private:
    Tensor4 run_main(const Tensor4& x) const;

    std::vector<std::unique_ptr<Layer>> main_;
    bool convex_;
    double raw_alpha_ = 0.0;
    double raw_grad_ = 0.0;
};

// Affine map on flattened features: y = W x + b, output shape (out, 1, 1).
class DenseLayer final : public Layer {
public:
    DenseLayer(std::size_t in_features, std::size_t out_features);

    std::string kind() const override { return "dense"; }
    Shape3 out_shape(const Shape3& in) const override;
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    void collect_params(std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;
    void zero_grads() override;
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<DenseLayer> load(std::istream& is);

private:
    Tensor4 apply(const Tensor4& x, bool with_bias) const;

    std::size_t in_ = 0, out_ = 0;
    std::vector<double> w_, wgrad_;  // row-major (out, in)
    std::vector<double> b_, bgrad_;
};

// Square orthogonal affine-free map on flattened features via the real Cayley
// transform: A = W - W^T, Q = (I - A)(I + A)^{-1}.
class OrthoDenseLayer final : public Layer {
public:
    explicit OrthoDenseLayer(std::size_t features);

    std::string kind() const override { return "ortho_dense"; }
    Shape3 out_shape(const Shape3& in) const override;
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    std::optional<double> lipschitz_bound() const override { return 1.0; }
    void collect_params(std::vector<ParamRef>& out) override;
    void init_params(Rng& rng) override;
    void zero_grads() override;
    void after_update() override;
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<OrthoDenseLayer> load(std::istream& is);

    const std::vector<double>& orthogonal_matrix() const { return q_; }

private:
    Tensor4 apply(const std::vector<double>& m, const Tensor4& x, bool transpose) const;

    std::size_t n_ = 0;
    std::vector<double> w_, wgrad_;  // raw (n, n)
    std::vector<double> q_, s_;      // Cayley result and (I + A)^{-1}
};

class ReluLayer final : public Layer {
public:
    ReluLayer() = default;

    std::string kind() const override { return "relu"; }
    Shape3 out_shape(const Shape3& in) const override { return in; }
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    std::optional<double> lipschitz_bound() const override { return 1.0; }
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<ReluLayer> load(std::istream& is);
};

// Appends zero channels (c_in -> c_out >= c_in); exactly norm-preserving.
class ChannelLiftLayer final : public Layer {
public:
    ChannelLiftLayer(std::size_t c_in, std::size_t c_out);

    std::string kind() const override { return "channel_lift"; }
    Shape3 out_shape(const Shape3& in) const override;
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    std::optional<double> lipschitz_bound() const override { return 1.0; }
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<ChannelLiftLayer> load(std::istream& is);

private:
    std::size_t c_in_ = 0, c_out_ = 0;
};

// y = factor * x. Fixed (non-learnable) scale; Lipschitz bound |factor|.
class ScaleLayer final : public Layer {
public:
    explicit ScaleLayer(double factor);

    std::string kind() const override { return "scale"; }
    Shape3 out_shape(const Shape3& in) const override { return in; }
    Tensor4 forward(const Tensor4& x) const override;
    Tensor4 forward_taped(const Tensor4& x, TapeNode& tape) const override;
    Tensor4 backward(const Tensor4& grad_out, const TapeNode& tape,
                     bool accumulate_param_grads) override;
    Tensor4 jvp(const Tensor4& dx, const TapeNode& tape) const override;
    std::optional<double> lipschitz_bound() const override;
    std::unique_ptr<Layer> clone() const override;
    void save(std::ostream& os) const override;
    static std::unique_ptr<ScaleLayer> load(std::istream& is);

    double factor() const { return factor_; }

private:
    double factor_ = 1.0;
};

// Writes the layer's kind tag followed by its payload.
void save_layer(std::ostream& os, const Layer& layer);
// Reads back any layer written by save_layer.
std::unique_ptr<Layer> load_layer(std::istream& is);

}  // namespace lsrs
