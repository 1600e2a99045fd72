#include "lsrs/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "lsrs/rng.hpp"

namespace lsrs {

double TrainConfig::lr_at(std::size_t epoch) const {
    return lr0 * std::pow(lr_decay, static_cast<double>(epoch / lr_step));
}

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("train config: epochs must be positive");
    if (!(lr0 > 0.0)) throw std::invalid_argument("train config: lr0 must be positive");
    if (!(lr_decay > 0.0)) throw std::invalid_argument("train config: lr_decay must be positive");
    if (lr_step == 0) throw std::invalid_argument("train config: lr_step must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("train config: momentum must lie in [0, 1)");
    }
    if (!(sigma >= 0.0)) throw std::invalid_argument("train config: sigma must be non-negative");
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
}

double softmax_cross_entropy(const Tensor4& scores, std::span<const std::size_t> labels,
                             Tensor4* grad) {
    const std::size_t batch = scores.shape().d0;
    const std::size_t classes = scores.example_size();
    if (labels.size() != batch) {
        throw std::invalid_argument("cross_entropy: batch of " + std::to_string(batch) +
                                    " scores vs " + std::to_string(labels.size()) + " labels");
    }
    if (grad) *grad = Tensor4(scores.shape());
    const double inv_batch = 1.0 / static_cast<double>(batch);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] >= classes) {
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[b]) +
                                        " out of range");
        }
        const auto s = scores.example(b);
        double mx = s[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, s[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(s[c] - mx);
        total += std::log(z) - (s[labels[b]] - mx);
        if (grad) {
            auto g = grad->example(b);
            for (std::size_t c = 0; c < classes; ++c) g[c] = std::exp(s[c] - mx) / z * inv_batch;
            g[labels[b]] -= inv_batch;
        }
    }
    return total * inv_batch;
}

double batch_accuracy(const Tensor4& scores, std::span<const std::size_t> labels) {
    const std::size_t batch = scores.shape().d0;
    std::size_t hits = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto s = scores.example(b);
        const std::size_t top =
            static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
        if (top == labels[b]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(batch);
}

double clean_accuracy(const SplitNetwork& net, const Dataset& data) {
    const Tensor4 scores = net.forward(data.inputs).second;
    return batch_accuracy(scores, data.labels);
}

TrainResult train(SplitNetwork& net, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    if (data.inputs.example_shape() != net.input_shape()) {
        throw std::invalid_argument("train: dataset shape " +
                                    to_string(data.inputs.example_shape()) +
                                    " does not match network input " +
                                    to_string(net.input_shape()));
    }
    if (data.n_classes != net.n_classes()) {
        throw std::invalid_argument("train: dataset has " + std::to_string(data.n_classes) +
                                    " classes, network outputs " +
                                    std::to_string(net.n_classes()));
    }

    std::vector<ParamRef> params;
    net.collect_params(params);
    std::vector<std::vector<double>> velocity;
    velocity.reserve(params.size());
    for (const ParamRef& p : params) velocity.emplace_back(p.size, 0.0);

    Rng shuffle_rng(cfg.seed, 1);
    Rng noise_rng(cfg.seed, 2);
    const std::size_t n = data.size();
    const std::size_t split = net.split_index();
    const std::size_t depth = net.layer_count();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        for (std::size_t i = n - 1; i > 0; --i) {
            std::swap(order[i], order[shuffle_rng.uniform_below(i + 1)]);
        }

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, n - start);
            const std::span<const std::size_t> idx(order.data() + start, bs);
            Tensor4 x = gather_examples(data.inputs, idx);
            std::vector<std::size_t> labels(bs);
            for (std::size_t k = 0; k < bs; ++k) labels[k] = data.labels[idx[k]];

            net.zero_grads();
            Tensor4 scores;
            Tensor4 grad;
            std::vector<TapeNode> enc_tapes, cls_tapes;
            if (cfg.noise_site == NoiseSite::input) {
                x += gaussian_sample(x.shape(), cfg.sigma, noise_rng);
                scores = net.forward_taped_range(x, 0, depth, enc_tapes);
                const double loss = softmax_cross_entropy(scores, labels, &grad);
                if (!std::isfinite(loss)) {
                    throw std::runtime_error("train: loss diverged at epoch " +
                                             std::to_string(epoch) + " step " +
                                             std::to_string(global_step));
                }
                net.backward_range(grad, 0, depth, enc_tapes, true);
                result.history.push_back(
                    {epoch, global_step, lr, loss, batch_accuracy(scores, labels)});
            } else {
                Tensor4 z = net.forward_taped_range(x, 0, split, enc_tapes);
                z += gaussian_sample(z.shape(), cfg.sigma, noise_rng);
                scores = net.forward_taped_range(z, split, depth, cls_tapes);
                const double loss = softmax_cross_entropy(scores, labels, &grad);
                if (!std::isfinite(loss)) {
                    throw std::runtime_error("train: loss diverged at epoch " +
                                             std::to_string(epoch) + " step " +
                                             std::to_string(global_step));
                }
                const Tensor4 gz = net.backward_range(grad, split, depth, cls_tapes, true);
                net.backward_range(gz, 0, split, enc_tapes, true);
                result.history.push_back(
                    {epoch, global_step, lr, loss, batch_accuracy(scores, labels)});
            }

            for (std::size_t p = 0; p < params.size(); ++p) {
                double* v = velocity[p].data();
                for (std::size_t k = 0; k < params[p].size; ++k) {
                    v[k] = cfg.momentum * v[k] + params[p].grad[k];
                    params[p].value[k] -= lr * v[k];
                }
            }
            net.after_update();
            ++global_step;
        }
    }

    result.final_train_accuracy = clean_accuracy(net, data);
    return result;
}

void write_history_csv(const std::string& path, const std::vector<TrainStep>& history) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("history: cannot open '" + path + "' for writing");
    os << "epoch, step, lr, loss, train_acc\n";
    char line[160];
    for (const TrainStep& h : history) {
        std::snprintf(line, sizeof(line), "%zu, %zu, %.17g, %.17g, %.17g\n", h.epoch, h.step, h.lr,
                      h.loss, h.train_acc);
        os << line;
    }
    if (!os) throw std::runtime_error("history: write to '" + path + "' failed");
}

}  // namespace lsrs
