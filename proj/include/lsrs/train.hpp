#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsrs/dataset.hpp"
#include "lsrs/network.hpp"
#include "lsrs/tensor.hpp"

namespace lsrs {

// Where the training-time Gaussian noise is injected: at the raw input, or at
// the latent representation z = f_e(x).
enum class NoiseSite { input, latent };

struct TrainConfig {
    std::size_t epochs = 30;
    double lr0 = 0.01;
    double lr_decay = 0.1;
    std::size_t lr_step = 30;
    double momentum = 0.9;
    double sigma = 0.0;
    NoiseSite noise_site = NoiseSite::input;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    // lr at a given epoch: lr0 * decay^floor(epoch / lr_step).
    double lr_at(std::size_t epoch) const;
    void validate() const;
};

// One loss-history row (per optimizer step).
struct TrainStep {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double train_acc = 0.0;
};

struct TrainResult {
    std::vector<TrainStep> history;
    double final_train_accuracy = 0.0;
};

// Mean cross-entropy of softmax scores (batch, classes, 1, 1) against the
// labels; fills dLoss/dscores into *grad when grad is non-null.
double softmax_cross_entropy(const Tensor4& scores, std::span<const std::size_t> labels,
                             Tensor4* grad = nullptr);

// Fraction of rows whose argmax matches the label.
double batch_accuracy(const Tensor4& scores, std::span<const std::size_t> labels);
// Plain-forward accuracy over a whole dataset (no noise, no sampling).
double clean_accuracy(const SplitNetwork& net, const Dataset& data);

// SGD with momentum over shuffled mini-batches, one fresh Gaussian draw per
// example per step injected at cfg.noise_site. Deterministic for a fixed
// seed. Throws if the loss turns non-finite.
TrainResult train(SplitNetwork& net, const Dataset& data, const TrainConfig& cfg);

// Loss-history CSV with header: epoch, step, lr, loss, train_acc.
void write_history_csv(const std::string& path, const std::vector<TrainStep>& history);

}  // namespace lsrs
