#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsrs/tensor.hpp"

namespace lsrs {

// Labeled image batch. Inputs are (N, c, h, w) with values in [0, 1].
struct Dataset {
    Tensor4 inputs;
    std::vector<std::size_t> labels;
    std::size_t n_classes = 0;
    std::string split;

    std::size_t size() const { return inputs.shape().d0; }
    void validate() const;
};

// Reads an IDX image file (magic 0x00000803) plus its label file (magic
// 0x00000801). Pixel bytes are normalized to [0, 1]. Malformed input is
// reported with the byte offset of the problem; image/label counts must
// match.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Synthetic Gaussian clusters: one center per class drawn uniformly in
// [0.3, 0.7] per coordinate, examples = center + spread * N(0, I), clamped to
// [0, 1], then shuffled. Bit-reproducible for a fixed seed.
Dataset make_blobs(std::size_t n_classes, std::size_t n_per_class, Shape3 shape, double spread,
                   std::uint64_t seed);

// Copies the selected examples into a fresh batch, in the order given.
Tensor4 gather_examples(const Tensor4& inputs, std::span<const std::size_t> idx);
// One-example batch view copy.
Tensor4 single_example(const Tensor4& inputs, std::size_t i);

}  // namespace lsrs
