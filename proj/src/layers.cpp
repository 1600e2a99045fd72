#include "lsrs/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lsrs/fft.hpp"
#include "lsrs/linalg.hpp"
#include "serialize.hpp"

namespace lsrs {

namespace {

CMatrix freq_block(const CTensor4& t, std::size_t i, std::size_t j) {
    const std::size_t c = t.shape().d0;
    CMatrix m(c, c);
    for (std::size_t r = 0; r < c; ++r) {
        for (std::size_t col = 0; col < c; ++col) m(r, col) = t.at(r, col, i, j);
    }
    return m;
}

void set_freq_block(CTensor4& t, std::size_t i, std::size_t j, const CMatrix& m) {
    const std::size_t c = t.shape().d0;
    for (std::size_t r = 0; r < c; ++r) {
        for (std::size_t col = 0; col < c; ++col) t.at(r, col, i, j) = m(r, col);
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Residue tolerance for gradient-path inverse transforms, scaled so large
// upstream gradients do not trip the absolute check.
double grad_residue_tol(const Tensor4& g) {
    return 1e-8 * std::max(1.0, g.fro_norm());
}

struct CayleyFactors {
    CTensor4 q;
    CTensor4 s;  // (I + A)^{-1} per frequency
};

CayleyFactors cayley_factors(const Tensor4& raw) {
    const auto& sh = raw.shape();
    if (sh.d0 != sh.d1) {
        throw std::invalid_argument("cayley_orthogonalize: channel dims must be square, got " +
                                    to_string(sh));
    }
    if (sh.d2 != sh.d3) {
        throw std::invalid_argument("cayley_orthogonalize: spatial dims must be square, got " +
                                    to_string(sh));
    }
    const std::size_t c = sh.d0;
    const std::size_t n = sh.d2;
    const CTensor4 wf = fft2(raw);
    CayleyFactors out{CTensor4(sh), CTensor4(sh)};
    const CMatrix eye = CMatrix::identity(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const CMatrix w = freq_block(wf, i, j);
            const CMatrix a = w - w.conj_transpose();
            const CMatrix s = complex_solve(eye + a, eye);
            // Q = (I - A)(I + A)^{-1} = 2(I + A)^{-1} - I
            CMatrix q = s;
            q *= std::complex<double>{2.0, 0.0};
            q = q - eye;
            set_freq_block(out.q, i, j, q);
            set_freq_block(out.s, i, j, s);
        }
    }
    return out;
}

}  // namespace

CTensor4 cayley_orthogonalize(const Tensor4& raw_weights) {
    return cayley_factors(raw_weights).q;
}

// ---------------------------------------------------------------------------
// OrthoConvLayer

OrthoConvLayer::OrthoConvLayer(std::size_t channels, std::size_t size)
    : raw_({channels, channels, size, size}), grad_(raw_.shape()) {
    if (channels == 0 || size == 0) {
        throw std::invalid_argument("ortho_conv: channels and size must be positive");
    }
    after_update();
}

Shape3 OrthoConvLayer::out_shape(const Shape3& in) const {
    if (in.c != channels() || in.h != size() || in.w != size()) {
        throw std::invalid_argument("ortho_conv: expected input " +
                                    to_string(Shape3{channels(), size(), size()}) + ", got " +
                                    to_string(in));
    }
    return in;
}

Tensor4 OrthoConvLayer::apply_spectral(const CTensor4& q, const Tensor4& x,
                                       double residue_tol) const {
    const std::size_t c = channels();
    const std::size_t n = size();
    if (x.shape().d1 != c || x.shape().d2 != n || x.shape().d3 != n) {
        throw std::invalid_argument("ortho_conv: input shape " + to_string(x.shape()) +
                                    " does not match (c,n,n)=(" + std::to_string(c) + "," +
                                    std::to_string(n) + "," + std::to_string(n) + ")");
    }
    const CTensor4 xf = fft2(x);
    CTensor4 yf(x.shape());
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t r = 0; r < c; ++r) {
                    std::complex<double> acc{0.0, 0.0};
                    for (std::size_t col = 0; col < c; ++col) {
                        acc += q.at(r, col, i, j) * xf.at(b, col, i, j);
                    }
                    yf.at(b, r, i, j) = acc;
                }
            }
        }
    }
    return real_part(ifft2(yf), residue_tol, "ortho_conv spectral product");
}

Tensor4 OrthoConvLayer::forward(const Tensor4& x) const {
    return apply_spectral(q_, x, 1e-8);
}

Tensor4 OrthoConvLayer::forward_taped(const Tensor4& x, TapeNode& tape) const {
    tape.spectral_in = fft2(x);
    const std::size_t c = channels();
    const std::size_t n = size();
    CTensor4 yf(x.shape());
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t r = 0; r < c; ++r) {
                    std::complex<double> acc{0.0, 0.0};
                    for (std::size_t col = 0; col < c; ++col) {
                        acc += q_.at(r, col, i, j) * tape.spectral_in.at(b, col, i, j);
                    }
                    yf.at(b, r, i, j) = acc;
                }
            }
        }
    }
    return real_part(ifft2(yf), 1e-8, "ortho_conv forward");
}

Tensor4 OrthoConvLayer::backward(const Tensor4& grad_out, const TapeNode& tape,
                                 bool accumulate_param_grads) {
    const std::size_t c = channels();
    const std::size_t n = size();
    const std::size_t batch = grad_out.shape().d0;
    if (tape.spectral_in.empty()) {
        throw std::logic_error("ortho_conv: backward without a recorded tape");
    }
    const CTensor4 gf = fft2(grad_out);

    // Input adjoint: pull the upstream spectrum through Q^H per frequency.
    CTensor4 xbar(grad_out.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t r = 0; r < c; ++r) {
                    std::complex<double> acc{0.0, 0.0};
                    for (std::size_t row = 0; row < c; ++row) {
                        acc += std::conj(q_.at(row, r, i, j)) * gf.at(b, row, i, j);
                    }
                    xbar.at(b, r, i, j) = acc;
                }
            }
        }
    }
    Tensor4 grad_in = real_part(ifft2(xbar), grad_residue_tol(grad_out), "ortho_conv input grad");

    if (accumulate_param_grads) {
        // Spectral weight adjoint, per frequency:
        //   Qbar = sum_b gf_b xf_b^H
        //   Abar = -(I + Q)^H Qbar S^H          (Cayley adjoint)
        //   Wbar~ = Abar - Abar^H               (skew-symmetrization is self-adjoint)
        // then back through the weight FFT.
        CTensor4 wbar_spec(raw_.shape());
        const CMatrix eye = CMatrix::identity(c);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                CMatrix qbar(c, c);
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t r = 0; r < c; ++r) {
                        const std::complex<double> gv = gf.at(b, r, i, j);
                        for (std::size_t col = 0; col < c; ++col) {
                            qbar(r, col) += gv * std::conj(tape.spectral_in.at(b, col, i, j));
                        }
                    }
                }
                const CMatrix q = freq_block(q_, i, j);
                const CMatrix s = freq_block(s_, i, j);
                CMatrix abar = (eye + q).conj_transpose() * qbar * s.conj_transpose();
                abar *= std::complex<double>{-1.0, 0.0};
                set_freq_block(wbar_spec, i, j, abar - abar.conj_transpose());
            }
        }
        const Tensor4 wgrad =
            real_part(ifft2(wbar_spec), grad_residue_tol(grad_out), "ortho_conv weight grad");
        grad_ += wgrad;
    }
    return grad_in;
}

Tensor4 OrthoConvLayer::jvp(const Tensor4& dx, const TapeNode&) const {
    // The layer is linear in its input for fixed weights.
    return apply_spectral(q_, dx, grad_residue_tol(dx));
}

void OrthoConvLayer::collect_params(std::vector<ParamRef>& out) {
    out.push_back({raw_.flat().data(), grad_.flat().data(), raw_.numel()});
}

void OrthoConvLayer::init_params(Rng& rng) {
    const double bound = 1.0 / (static_cast<double>(channels()) * static_cast<double>(size()));
    for (double& v : raw_.flat()) v = bound * (2.0 * rng.uniform01() - 1.0);
    after_update();
}

void OrthoConvLayer::zero_grads() {
    for (double& v : grad_.flat()) v = 0.0;
}

void OrthoConvLayer::after_update() {
    CayleyFactors f = cayley_factors(raw_);
    q_ = std::move(f.q);
    s_ = std::move(f.s);
}

std::unique_ptr<Layer> OrthoConvLayer::clone() const {
    auto copy = std::make_unique<OrthoConvLayer>(channels(), size());
    copy->raw_ = raw_;
    copy->q_ = q_;
    copy->s_ = s_;
    return copy;
}

void OrthoConvLayer::save(std::ostream& os) const {
    ser::write_tensor(os, raw_);
}

std::unique_ptr<OrthoConvLayer> OrthoConvLayer::load(std::istream& is) {
    Tensor4 raw = ser::read_tensor(is);
    auto layer = std::make_unique<OrthoConvLayer>(raw.shape().d0, raw.shape().d2);
    layer->set_raw_weights(raw);
    return layer;
}

void OrthoConvLayer::set_raw_weights(const Tensor4& w) {
    if (!(w.shape() == raw_.shape())) {
        throw std::invalid_argument("ortho_conv: weight shape " + to_string(w.shape()) +
                                    " does not match " + to_string(raw_.shape()));
    }
    raw_ = w;
    after_update();
}

// ---------------------------------------------------------------------------
// PlainConvLayer

PlainConvLayer::PlainConvLayer(std::size_t c_out, std::size_t c_in, std::size_t kernel)
    : kernel_({c_out, c_in, kernel, kernel}),
      kgrad_(kernel_.shape()),
      bias_(c_out, 0.0),
      bgrad_(c_out, 0.0) {
    if (c_out == 0 || c_in == 0) {
        throw std::invalid_argument("plain_conv: channel counts must be positive");
    }
    if (kernel % 2 == 0) {
        throw std::invalid_argument("plain_conv: kernel size must be odd, got " +
                                    std::to_string(kernel));
    }
}

Shape3 PlainConvLayer::out_shape(const Shape3& in) const {
    if (in.c != kernel_.shape().d1) {
        throw std::invalid_argument("plain_conv: expected " + std::to_string(kernel_.shape().d1) +
                                    " input channels, got " + std::to_string(in.c));
    }
    return {kernel_.shape().d0, in.h, in.w};
}

Tensor4 PlainConvLayer::conv(const Tensor4& x, bool with_bias) const {
    const std::size_t co = kernel_.shape().d0;
    const std::size_t ci = kernel_.shape().d1;
    const std::size_t k = kernel_.shape().d2;
    const std::size_t h = x.shape().d2;
    const std::size_t w = x.shape().d3;
    const std::size_t off = k / 2;
    if (x.shape().d1 != ci) {
        throw std::invalid_argument("plain_conv: input channels " + std::to_string(x.shape().d1) +
                                    " != " + std::to_string(ci));
    }
    Tensor4 out({x.shape().d0, co, h, w});
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        for (std::size_t o = 0; o < co; ++o) {
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    double acc = with_bias ? bias_[o] : 0.0;
                    for (std::size_t c = 0; c < ci; ++c) {
                        for (std::size_t p = 0; p < k; ++p) {
                            for (std::size_t q = 0; q < k; ++q) {
                                const std::size_t ii = (i + h + p - off) % h;
                                const std::size_t jj = (j + w + q - off) % w;
                                acc += kernel_.at(o, c, p, q) * x.at(b, c, ii, jj);
                            }
                        }
                    }
                    out.at(b, o, i, j) = acc;
                }
            }
        }
    }
    return out;
}

Tensor4 PlainConvLayer::forward(const Tensor4& x) const { return conv(x, true); }

Tensor4 PlainConvLayer::forward_taped(const Tensor4& x, TapeNode& tape) const {
    tape.input = x;
    return conv(x, true);
}

Tensor4 PlainConvLayer::backward(const Tensor4& grad_out, const TapeNode& tape,
                                 bool accumulate_param_grads) {
    const Tensor4& x = tape.input;
    if (x.empty()) throw std::logic_error("plain_conv: backward without a recorded tape");
    const std::size_t co = kernel_.shape().d0;
    const std::size_t ci = kernel_.shape().d1;
    const std::size_t k = kernel_.shape().d2;
    const std::size_t h = x.shape().d2;
    const std::size_t w = x.shape().d3;
    const std::size_t off = k / 2;
    Tensor4 grad_in(x.shape());
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        for (std::size_t o = 0; o < co; ++o) {
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    const double g = grad_out.at(b, o, i, j);
                    if (accumulate_param_grads) bgrad_[o] += g;
                    for (std::size_t c = 0; c < ci; ++c) {
                        for (std::size_t p = 0; p < k; ++p) {
                            for (std::size_t q = 0; q < k; ++q) {
                                const std::size_t ii = (i + h + p - off) % h;
                                const std::size_t jj = (j + w + q - off) % w;
                                grad_in.at(b, c, ii, jj) += kernel_.at(o, c, p, q) * g;
                                if (accumulate_param_grads) {
                                    kgrad_.at(o, c, p, q) += g * x.at(b, c, ii, jj);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

Tensor4 PlainConvLayer::jvp(const Tensor4& dx, const TapeNode&) const { return conv(dx, false); }

void PlainConvLayer::collect_params(std::vector<ParamRef>& out) {
    out.push_back({kernel_.flat().data(), kgrad_.flat().data(), kernel_.numel()});
    out.push_back({bias_.data(), bgrad_.data(), bias_.size()});
}

void PlainConvLayer::init_params(Rng& rng) {
    const auto& s = kernel_.shape();
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.d1 * s.d2 * s.d3));
    for (double& v : kernel_.flat()) v = bound * (2.0 * rng.uniform01() - 1.0);
    std::fill(bias_.begin(), bias_.end(), 0.0);
}

void PlainConvLayer::zero_grads() {
    for (double& v : kgrad_.flat()) v = 0.0;
    std::fill(bgrad_.begin(), bgrad_.end(), 0.0);
}

std::unique_ptr<Layer> PlainConvLayer::clone() const {
    auto copy = std::make_unique<PlainConvLayer>(kernel_.shape().d0, kernel_.shape().d1,
                                                 kernel_.shape().d2);
    copy->kernel_ = kernel_;
    copy->bias_ = bias_;
    return copy;
}

void PlainConvLayer::save(std::ostream& os) const {
    ser::write_tensor(os, kernel_);
    ser::write_doubles(os, bias_);
}

std::unique_ptr<PlainConvLayer> PlainConvLayer::load(std::istream& is) {
    Tensor4 kernel = ser::read_tensor(is);
    std::vector<double> bias = ser::read_doubles(is);
    auto layer = std::make_unique<PlainConvLayer>(kernel.shape().d0, kernel.shape().d1,
                                                  kernel.shape().d2);
    layer->kernel_ = std::move(kernel);
    layer->bias_ = std::move(bias);
    return layer;
}

// ---------------------------------------------------------------------------
// GroupSortLayer

GroupSortLayer::GroupSortLayer(std::size_t group_size) : group_(group_size) {
    if (group_ == 0) throw std::invalid_argument("group_sort: group size must be positive");
}

Shape3 GroupSortLayer::out_shape(const Shape3& in) const {
    if (in.numel() % group_ != 0) {
        throw std::invalid_argument("group_sort: feature count " + std::to_string(in.numel()) +
                                    " not divisible by group size " + std::to_string(group_));
    }
    return in;
}

Tensor4 GroupSortLayer::forward(const Tensor4& x) const {
    out_shape(x.example_shape());
    Tensor4 y = x;
    for (std::size_t b = 0; b < y.shape().d0; ++b) {
        auto ex = y.example(b);
        for (std::size_t g = 0; g + group_ <= ex.size(); g += group_) {
            std::sort(ex.begin() + g, ex.begin() + g + group_);
        }
    }
    return y;
}

Tensor4 GroupSortLayer::forward_taped(const Tensor4& x, TapeNode& tape) const {
    out_shape(x.example_shape());
    const std::size_t f = x.example_size();
    tape.perm.resize(x.shape().d0 * f);
    Tensor4 y(x.shape());
    std::vector<std::uint32_t> idx(group_);
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        auto in = x.example(b);
        auto out = y.example(b);
        for (std::size_t g = 0; g + group_ <= f; g += group_) {
            std::iota(idx.begin(), idx.end(), static_cast<std::uint32_t>(g));
            std::stable_sort(idx.begin(), idx.end(),
                             [&in](std::uint32_t a, std::uint32_t c) { return in[a] < in[c]; });
            for (std::size_t k = 0; k < group_; ++k) {
                out[g + k] = in[idx[k]];
                tape.perm[b * f + g + k] = idx[k];
            }
        }
    }
    return y;
}

Tensor4 GroupSortLayer::backward(const Tensor4& grad_out, const TapeNode& tape,
                                 bool /*accumulate_param_grads*/) {
    return scatter_inverse(grad_out, tape);
}

// Scatter through the inverse of the forward permutation.
Tensor4 GroupSortLayer::scatter_inverse(const Tensor4& grad_out, const TapeNode& tape) const {
    if (tape.perm.size() != grad_out.numel()) {
        throw std::logic_error("group_sort: tape does not match gradient shape");
    }
    Tensor4 grad_in(grad_out.shape());
    const std::size_t f = grad_out.example_size();
    for (std::size_t b = 0; b < grad_out.shape().d0; ++b) {
        auto g = grad_out.example(b);
        auto gi = grad_in.example(b);
        for (std::size_t k = 0; k < f; ++k) gi[tape.perm[b * f + k]] = g[k];
    }
    return grad_in;
}

Tensor4 GroupSortLayer::jvp(const Tensor4& dx, const TapeNode& tape) const {
    if (tape.perm.size() != dx.numel()) {
        throw std::logic_error("group_sort: tape does not match tangent shape");
    }
    Tensor4 dy(dx.shape());
    const std::size_t f = dx.example_size();
    for (std::size_t b = 0; b < dx.shape().d0; ++b) {
        auto in = dx.example(b);
        auto out = dy.example(b);
        for (std::size_t k = 0; k < f; ++k) out[k] = in[tape.perm[b * f + k]];
    }
    return dy;
}

std::unique_ptr<Layer> GroupSortLayer::clone() const {
    return std::make_unique<GroupSortLayer>(group_);
}

void GroupSortLayer::save(std::ostream& os) const { ser::write_u64(os, group_); }

std::unique_ptr<GroupSortLayer> GroupSortLayer::load(std::istream& is) {
    return std::make_unique<GroupSortLayer>(ser::read_u64(is));
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock::ResidualBlock(std::vector<std::unique_ptr<Layer>> main, bool convex)
    : main_(std::move(main)), convex_(convex) {
    if (main_.empty()) throw std::invalid_argument("residual: main branch must be nonempty");
}

Shape3 ResidualBlock::out_shape(const Shape3& in) const {
    Shape3 s = in;
    for (const auto& l : main_) s = l->out_shape(s);
    if (!(s == in)) {
        throw std::invalid_argument("residual: main branch maps " + to_string(in) + " to " +
                                    to_string(s) + "; shape must be preserved");
    }
    return in;
}

double ResidualBlock::alpha() const { return sigmoid(raw_alpha_); }

void ResidualBlock::set_alpha(double a) {
    if (a <= 0.0) {
        raw_alpha_ = -1000.0;
    } else if (a >= 1.0) {
        raw_alpha_ = 1000.0;
    } else {
        raw_alpha_ = std::log(a / (1.0 - a));
    }
}

Tensor4 ResidualBlock::run_main(const Tensor4& x) const {
    Tensor4 cur = x;
    for (const auto& l : main_) cur = l->forward(cur);
    return cur;
}

Tensor4 ResidualBlock::forward(const Tensor4& x) const {
    Tensor4 m = run_main(x);
    if (convex_) {
        const double a = alpha();
        m *= a;
        m.add_scaled(1.0 - a, x);
    } else {
        m += x;
    }
    return m;
}

Tensor4 ResidualBlock::forward_taped(const Tensor4& x, TapeNode& tape) const {
    tape.input = x;
    tape.sub.resize(main_.size());
    Tensor4 cur = x;
    for (std::size_t i = 0; i < main_.size(); ++i) {
        cur = main_[i]->forward_taped(cur, tape.sub[i]);
    }
    tape.main_out = cur;
    tape.alpha = convex_ ? alpha() : 1.0;
    Tensor4 y = cur;
    if (convex_) {
        y *= tape.alpha;
        y.add_scaled(1.0 - tape.alpha, x);
    } else {
        y += x;
    }
    return y;
}

Tensor4 ResidualBlock::backward(const Tensor4& grad_out, const TapeNode& tape,
                                bool accumulate_param_grads) {
    if (tape.sub.size() != main_.size()) {
        throw std::logic_error("residual: backward without a recorded tape");
    }
    Tensor4 gm = grad_out;
    if (convex_) {
        const double a = tape.alpha;
        if (accumulate_param_grads) {
            double dot = 0.0;
            const auto g = grad_out.flat();
            const auto m = tape.main_out.flat();
            const auto x = tape.input.flat();
            for (std::size_t k = 0; k < g.size(); ++k) dot += g[k] * (m[k] - x[k]);
            raw_grad_ += a * (1.0 - a) * dot;
        }
        gm *= a;
    }
    for (std::size_t i = main_.size(); i-- > 0;) {
        gm = main_[i]->backward(gm, tape.sub[i], accumulate_param_grads);
    }
    if (convex_) {
        gm.add_scaled(1.0 - tape.alpha, grad_out);
    } else {
        gm += grad_out;
    }
    return gm;
}

Tensor4 ResidualBlock::jvp(const Tensor4& dx, const TapeNode& tape) const {
    if (tape.sub.size() != main_.size()) {
        throw std::logic_error("residual: jvp without a recorded tape");
    }
    Tensor4 dm = dx;
    for (std::size_t i = 0; i < main_.size(); ++i) dm = main_[i]->jvp(dm, tape.sub[i]);
    if (convex_) {
        dm *= tape.alpha;
        dm.add_scaled(1.0 - tape.alpha, dx);
    } else {
        dm += dx;
    }
    return dm;
}

std::optional<double> ResidualBlock::lipschitz_bound() const {
    double product = 1.0;
    for (const auto& l : main_) {
        const auto b = l->lipschitz_bound();
        if (!b) return std::nullopt;
        product *= *b;
    }
    if (convex_) {
        // sup over alpha in (0,1) of alpha*product + (1-alpha)*1
        return std::max(product, 1.0);
    }
    return product + 1.0;
}

void ResidualBlock::collect_params(std::vector<ParamRef>& out) {
    for (auto& l : main_) l->collect_params(out);
    if (convex_) out.push_back({&raw_alpha_, &raw_grad_, 1});
}

void ResidualBlock::init_params(Rng& rng) {
    for (auto& l : main_) l->init_params(rng);
    raw_alpha_ = 0.0;
}

void ResidualBlock::zero_grads() {
    for (auto& l : main_) l->zero_grads();
    raw_grad_ = 0.0;
}

void ResidualBlock::after_update() {
    for (auto& l : main_) l->after_update();
}

std::unique_ptr<Layer> ResidualBlock::clone() const {
    std::vector<std::unique_ptr<Layer>> main;
    main.reserve(main_.size());
    for (const auto& l : main_) main.push_back(l->clone());
    auto copy = std::make_unique<ResidualBlock>(std::move(main), convex_);
    copy->raw_alpha_ = raw_alpha_;
    return copy;
}

void ResidualBlock::save(std::ostream& os) const {
    ser::write_u64(os, convex_ ? 1 : 0);
    ser::write_f64(os, raw_alpha_);
    ser::write_u64(os, main_.size());
    for (const auto& l : main_) save_layer(os, *l);
}

std::unique_ptr<ResidualBlock> ResidualBlock::load(std::istream& is) {
    const bool convex = ser::read_u64(is) != 0;
    const double raw_alpha = ser::read_f64(is);
    const std::uint64_t count = ser::read_u64(is);
    std::vector<std::unique_ptr<Layer>> main;
    main.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) main.push_back(load_layer(is));
    auto block = std::make_unique<ResidualBlock>(std::move(main), convex);
    block->raw_alpha_ = raw_alpha;
    return block;
}

// ---------------------------------------------------------------------------
// DenseLayer

DenseLayer::DenseLayer(std::size_t in_features, std::size_t out_features)
    : in_(in_features),
      out_(out_features),
      w_(in_features * out_features, 0.0),
      wgrad_(w_.size(), 0.0),
      b_(out_features, 0.0),
      bgrad_(out_features, 0.0) {
    if (in_ == 0 || out_ == 0) {
        throw std::invalid_argument("dense: feature counts must be positive");
    }
}

Shape3 DenseLayer::out_shape(const Shape3& in) const {
    if (in.numel() != in_) {
        throw std::invalid_argument("dense: expected " + std::to_string(in_) + " features, got " +
                                    to_string(in));
    }
    return {out_, 1, 1};
}

Tensor4 DenseLayer::apply(const Tensor4& x, bool with_bias) const {
    if (x.example_size() != in_) {
        throw std::invalid_argument("dense: input " + to_string(x.shape()) + " does not flatten to " +
                                    std::to_string(in_));
    }
    Tensor4 y({x.shape().d0, out_, 1, 1});
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        const auto in = x.example(b);
        auto out = y.example(b);
        for (std::size_t o = 0; o < out_; ++o) {
            double acc = with_bias ? b_[o] : 0.0;
            const double* row = &w_[o * in_];
            for (std::size_t i = 0; i < in_; ++i) acc += row[i] * in[i];
            out[o] = acc;
        }
    }
    return y;
}

Tensor4 DenseLayer::forward(const Tensor4& x) const { return apply(x, true); }

Tensor4 DenseLayer::forward_taped(const Tensor4& x, TapeNode& tape) const {
    tape.input = x;
    return apply(x, true);
}

Tensor4 DenseLayer::backward(const Tensor4& grad_out, const TapeNode& tape,
                             bool accumulate_param_grads) {
    const Tensor4& x = tape.input;
    if (x.empty()) throw std::logic_error("dense: backward without a recorded tape");
    Tensor4 grad_in(x.shape());
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        const auto g = grad_out.example(b);
        const auto in = x.example(b);
        auto gi = grad_in.example(b);
        for (std::size_t o = 0; o < out_; ++o) {
            const double gv = g[o];
            const double* row = &w_[o * in_];
            for (std::size_t i = 0; i < in_; ++i) gi[i] += row[i] * gv;
            if (accumulate_param_grads) {
                double* wrow = &wgrad_[o * in_];
                for (std::size_t i = 0; i < in_; ++i) wrow[i] += gv * in[i];
                bgrad_[o] += gv;
            }
        }
    }
    return grad_in;
}

Tensor4 DenseLayer::jvp(const Tensor4& dx, const TapeNode&) const { return apply(dx, false); }

void DenseLayer::collect_params(std::vector<ParamRef>& out) {
    out.push_back({w_.data(), wgrad_.data(), w_.size()});
    out.push_back({b_.data(), bgrad_.data(), b_.size()});
}

void DenseLayer::init_params(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    for (double& v : w_) v = bound * (2.0 * rng.uniform01() - 1.0);
    std::fill(b_.begin(), b_.end(), 0.0);
}

void DenseLayer::zero_grads() {
    std::fill(wgrad_.begin(), wgrad_.end(), 0.0);
    std::fill(bgrad_.begin(), bgrad_.end(), 0.0);
}

std::unique_ptr<Layer> DenseLayer::clone() const {
    auto copy = std::make_unique<DenseLayer>(in_, out_);
    copy->w_ = w_;
    copy->b_ = b_;
    return copy;
}

void DenseLayer::save(std::ostream& os) const {
    ser::write_u64(os, in_);
    ser::write_u64(os, out_);
    ser::write_doubles(os, w_);
    ser::write_doubles(os, b_);
}

std::unique_ptr<DenseLayer> DenseLayer::load(std::istream& is) {
    const std::uint64_t in = ser::read_u64(is);
    const std::uint64_t out = ser::read_u64(is);
    auto layer = std::make_unique<DenseLayer>(in, out);
    layer->w_ = ser::read_doubles(is);
    layer->b_ = ser::read_doubles(is);
    if (layer->w_.size() != in * out || layer->b_.size() != out) {
        throw std::runtime_error("checkpoint: dense parameter sizes do not match header");
    }
    return layer;
}

// ---------------------------------------------------------------------------
// OrthoDenseLayer

namespace {

// Real matrix helpers for the dense Cayley path, row-major (n, n).
std::vector<double> real_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                std::size_t n, bool ta, bool tb) {
    std::vector<double> out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t j = 0; j < n; ++j) {
                const double av = ta ? a[k * n + i] : a[i * n + k];
                const double bv = tb ? b[j * n + k] : b[k * n + j];
                out[i * n + j] += av * bv;
            }
        }
    }
    return out;
}

}  // namespace

OrthoDenseLayer::OrthoDenseLayer(std::size_t features)
    : n_(features), w_(features * features, 0.0), wgrad_(w_.size(), 0.0) {
    if (n_ == 0) throw std::invalid_argument("ortho_dense: feature count must be positive");
    after_update();
}

Shape3 OrthoDenseLayer::out_shape(const Shape3& in) const {
    if (in.numel() != n_) {
        throw std::invalid_argument("ortho_dense: expected " + std::to_string(n_) +
                                    " features, got " + to_string(in));
    }
    return in;
}

Tensor4 OrthoDenseLayer::apply(const std::vector<double>& m, const Tensor4& x,
                               bool transpose) const {
    if (x.example_size() != n_) {
        throw std::invalid_argument("ortho_dense: input " + to_string(x.shape()) +
                                    " does not flatten to " + std::to_string(n_));
    }
    Tensor4 y(x.shape());
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        const auto in = x.example(b);
        auto out = y.example(b);
        for (std::size_t r = 0; r < n_; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < n_; ++c) {
                acc += (transpose ? m[c * n_ + r] : m[r * n_ + c]) * in[c];
            }
            out[r] = acc;
        }
    }
    return y;
}

Tensor4 OrthoDenseLayer::forward(const Tensor4& x) const { return apply(q_, x, false); }

Tensor4 OrthoDenseLayer::forward_taped(const Tensor4& x, TapeNode& tape) const {
    tape.input = x;
    return apply(q_, x, false);
}

Tensor4 OrthoDenseLayer::backward(const Tensor4& grad_out, const TapeNode& tape,
                                  bool accumulate_param_grads) {
    const Tensor4& x = tape.input;
    if (x.empty()) throw std::logic_error("ortho_dense: backward without a recorded tape");
    Tensor4 grad_in = apply(q_, grad_out, true);
    if (accumulate_param_grads) {
        std::vector<double> qbar(n_ * n_, 0.0);
        for (std::size_t b = 0; b < x.shape().d0; ++b) {
            const auto g = grad_out.example(b);
            const auto in = x.example(b);
            for (std::size_t r = 0; r < n_; ++r) {
                for (std::size_t c = 0; c < n_; ++c) qbar[r * n_ + c] += g[r] * in[c];
            }
        }
        // Abar = -(I + Q)^T Qbar S^T, Wbar = Abar - Abar^T
        std::vector<double> ipq = q_;
        for (std::size_t i = 0; i < n_; ++i) ipq[i * n_ + i] += 1.0;
        std::vector<double> t = real_matmul(ipq, qbar, n_, true, false);
        std::vector<double> abar = real_matmul(t, s_, n_, false, true);
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j < n_; ++j) {
                wgrad_[i * n_ + j] += -abar[i * n_ + j] + abar[j * n_ + i];
            }
        }
    }
    return grad_in;
}

Tensor4 OrthoDenseLayer::jvp(const Tensor4& dx, const TapeNode&) const {
    return apply(q_, dx, false);
}

void OrthoDenseLayer::collect_params(std::vector<ParamRef>& out) {
    out.push_back({w_.data(), wgrad_.data(), w_.size()});
}

void OrthoDenseLayer::init_params(Rng& rng) {
    const double bound = 1.0 / static_cast<double>(n_);
    for (double& v : w_) v = bound * (2.0 * rng.uniform01() - 1.0);
    after_update();
}

void OrthoDenseLayer::zero_grads() { std::fill(wgrad_.begin(), wgrad_.end(), 0.0); }

void OrthoDenseLayer::after_update() {
    // A = W - W^T; S = (I + A)^{-1}; Q = 2S - I. Real data stays real through
    // the complex LU, so the imaginary parts are exactly zero.
    CMatrix ipa(n_, n_);
    for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t j = 0; j < n_; ++j) {
            ipa(i, j) = {w_[i * n_ + j] - w_[j * n_ + i], 0.0};
        }
        ipa(i, i) += 1.0;
    }
    const CMatrix s = complex_solve(ipa, CMatrix::identity(n_));
    q_.assign(n_ * n_, 0.0);
    s_.assign(n_ * n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t j = 0; j < n_; ++j) {
            s_[i * n_ + j] = s(i, j).real();
            q_[i * n_ + j] = 2.0 * s(i, j).real() - (i == j ? 1.0 : 0.0);
        }
    }
}

std::unique_ptr<Layer> OrthoDenseLayer::clone() const {
    auto copy = std::make_unique<OrthoDenseLayer>(n_);
    copy->w_ = w_;
    copy->q_ = q_;
    copy->s_ = s_;
    return copy;
}

void OrthoDenseLayer::save(std::ostream& os) const {
    ser::write_u64(os, n_);
    ser::write_doubles(os, w_);
}

std::unique_ptr<OrthoDenseLayer> OrthoDenseLayer::load(std::istream& is) {
    const std::uint64_t n = ser::read_u64(is);
    auto layer = std::make_unique<OrthoDenseLayer>(n);
    layer->w_ = ser::read_doubles(is);
    if (layer->w_.size() != n * n) {
        throw std::runtime_error("checkpoint: ortho_dense parameter size does not match header");
    }
    layer->after_update();
    return layer;
}

// ---------------------------------------------------------------------------
// ReluLayer

Tensor4 ReluLayer::forward(const Tensor4& x) const {
    Tensor4 y = x;
    for (double& v : y.flat()) v = std::max(v, 0.0);
    return y;
}

Tensor4 ReluLayer::forward_taped(const Tensor4& x, TapeNode& tape) const {
    tape.input = x;
    return forward(x);
}

Tensor4 ReluLayer::backward(const Tensor4& grad_out, const TapeNode& tape,
                            bool /*accumulate_param_grads*/) {
    if (tape.input.empty()) throw std::logic_error("relu: backward without a recorded tape");
    Tensor4 grad_in = grad_out;
    const auto x = tape.input.flat();
    auto g = grad_in.flat();
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (x[k] <= 0.0) g[k] = 0.0;
    }
    return grad_in;
}

Tensor4 ReluLayer::jvp(const Tensor4& dx, const TapeNode& tape) const {
    if (tape.input.empty()) throw std::logic_error("relu: jvp without a recorded tape");
    Tensor4 dy = dx;
    const auto x = tape.input.flat();
    auto d = dy.flat();
    for (std::size_t k = 0; k < d.size(); ++k) {
        if (x[k] <= 0.0) d[k] = 0.0;
    }
    return dy;
}

std::unique_ptr<Layer> ReluLayer::clone() const { return std::make_unique<ReluLayer>(); }

void ReluLayer::save(std::ostream&) const {}

std::unique_ptr<ReluLayer> ReluLayer::load(std::istream&) {
    return std::make_unique<ReluLayer>();
}

// ---------------------------------------------------------------------------
// ChannelLiftLayer

ChannelLiftLayer::ChannelLiftLayer(std::size_t c_in, std::size_t c_out)
    : c_in_(c_in), c_out_(c_out) {
    if (c_in == 0 || c_out < c_in) {
        throw std::invalid_argument("channel_lift: need c_out >= c_in >= 1, got " +
                                    std::to_string(c_out) + " < " + std::to_string(c_in));
    }
}

Shape3 ChannelLiftLayer::out_shape(const Shape3& in) const {
    if (in.c != c_in_) {
        throw std::invalid_argument("channel_lift: expected " + std::to_string(c_in_) +
                                    " channels, got " + std::to_string(in.c));
    }
    return {c_out_, in.h, in.w};
}

Tensor4 ChannelLiftLayer::forward(const Tensor4& x) const {
    out_shape(x.example_shape());
    Tensor4 y({x.shape().d0, c_out_, x.shape().d2, x.shape().d3});
    for (std::size_t b = 0; b < x.shape().d0; ++b) {
        for (std::size_t c = 0; c < c_in_; ++c) {
            for (std::size_t i = 0; i < x.shape().d2; ++i) {
                for (std::size_t j = 0; j < x.shape().d3; ++j) {
                    y.at(b, c, i, j) = x.at(b, c, i, j);
                }
            }
        }
    }
    return y;
}

Tensor4 ChannelLiftLayer::forward_taped(const Tensor4& x, TapeNode& tape) const {
    tape.input = x;
    return forward(x);
}

Tensor4 ChannelLiftLayer::backward(const Tensor4& grad_out, const TapeNode& tape,
                                   bool /*accumulate_param_grads*/) {
    if (tape.input.empty()) throw std::logic_error("channel_lift: backward without a recorded tape");
    Tensor4 grad_in(tape.input.shape());
    for (std::size_t b = 0; b < grad_in.shape().d0; ++b) {
        for (std::size_t c = 0; c < c_in_; ++c) {
            for (std::size_t i = 0; i < grad_in.shape().d2; ++i) {
                for (std::size_t j = 0; j < grad_in.shape().d3; ++j) {
                    grad_in.at(b, c, i, j) = grad_out.at(b, c, i, j);
                }
            }
        }
    }
    return grad_in;
}

Tensor4 ChannelLiftLayer::jvp(const Tensor4& dx, const TapeNode&) const { return forward(dx); }

std::unique_ptr<Layer> ChannelLiftLayer::clone() const {
    return std::make_unique<ChannelLiftLayer>(c_in_, c_out_);
}

void ChannelLiftLayer::save(std::ostream& os) const {
    ser::write_u64(os, c_in_);
    ser::write_u64(os, c_out_);
}

std::unique_ptr<ChannelLiftLayer> ChannelLiftLayer::load(std::istream& is) {
    const std::uint64_t c_in = ser::read_u64(is);
    const std::uint64_t c_out = ser::read_u64(is);
    return std::make_unique<ChannelLiftLayer>(c_in, c_out);
}

// ---------------------------------------------------------------------------
// ScaleLayer

ScaleLayer::ScaleLayer(double factor) : factor_(factor) {
    if (factor == 0.0) throw std::invalid_argument("scale: factor must be nonzero");
}

Tensor4 ScaleLayer::forward(const Tensor4& x) const {
    Tensor4 y = x;
    y *= factor_;
    return y;
}

Tensor4 ScaleLayer::forward_taped(const Tensor4& x, TapeNode&) const { return forward(x); }

Tensor4 ScaleLayer::backward(const Tensor4& grad_out, const TapeNode&,
                             bool /*accumulate_param_grads*/) {
    Tensor4 g = grad_out;
    g *= factor_;
    return g;
}

Tensor4 ScaleLayer::jvp(const Tensor4& dx, const TapeNode&) const { return forward(dx); }

std::optional<double> ScaleLayer::lipschitz_bound() const { return std::abs(factor_); }

std::unique_ptr<Layer> ScaleLayer::clone() const { return std::make_unique<ScaleLayer>(factor_); }

void ScaleLayer::save(std::ostream& os) const { ser::write_f64(os, factor_); }

std::unique_ptr<ScaleLayer> ScaleLayer::load(std::istream& is) {
    return std::make_unique<ScaleLayer>(ser::read_f64(is));
}

// ---------------------------------------------------------------------------
// Registry

void save_layer(std::ostream& os, const Layer& layer) {
    ser::write_string(os, layer.kind());
    layer.save(os);
}

std::unique_ptr<Layer> load_layer(std::istream& is) {
    const std::string kind = ser::read_string(is);
    if (kind == "ortho_conv") return OrthoConvLayer::load(is);
    if (kind == "plain_conv") return PlainConvLayer::load(is);
    if (kind == "group_sort") return GroupSortLayer::load(is);
    if (kind == "residual") return ResidualBlock::load(is);
    if (kind == "dense") return DenseLayer::load(is);
    if (kind == "ortho_dense") return OrthoDenseLayer::load(is);
    if (kind == "relu") return ReluLayer::load(is);
    if (kind == "channel_lift") return ChannelLiftLayer::load(is);
    if (kind == "scale") return ScaleLayer::load(is);
    throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
}

}  // namespace lsrs
