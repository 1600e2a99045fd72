#include "lsrs/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "lsrs/rng.hpp"

namespace lsrs {

void Dataset::validate() const {
    if (inputs.shape().d0 == 0) throw std::invalid_argument("dataset: empty");
    if (labels.size() != inputs.shape().d0) {
        throw std::invalid_argument("dataset: " + std::to_string(inputs.shape().d0) +
                                    " inputs but " + std::to_string(labels.size()) + " labels");
    }
    if (n_classes == 0) throw std::invalid_argument("dataset: class count is zero");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= n_classes) {
            throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) +
                                        " at index " + std::to_string(i) + " exceeds class count " +
                                        std::to_string(n_classes));
        }
    }
}

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

[[noreturn]] void idx_fail(const std::string& path, std::size_t offset, const std::string& what) {
    throw std::runtime_error("idx: " + path + " at byte " + std::to_string(offset) + ": " + what);
}

std::uint32_t read_be32(std::ifstream& is, const std::string& path, std::size_t& offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) idx_fail(path, offset, "truncated 32-bit field");
    offset += 4;
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("idx: cannot open '" + images_path + "'");
    std::size_t off = 0;
    const std::uint32_t magic = read_be32(imgs, images_path, off);
    if (magic != kIdxImagesMagic) {
        idx_fail(images_path, 0,
                 "bad image magic " + std::to_string(magic) + " (want " +
                     std::to_string(kIdxImagesMagic) + ")");
    }
    const std::uint32_t count = read_be32(imgs, images_path, off);
    const std::uint32_t rows = read_be32(imgs, images_path, off);
    const std::uint32_t cols = read_be32(imgs, images_path, off);
    if (count == 0 || rows == 0 || cols == 0) {
        idx_fail(images_path, 4, "zero dimension in header");
    }

    Dataset out;
    out.inputs = Tensor4({count, 1, rows, cols});
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < count; ++i) {
        imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(imgs.gcount()) != buf.size()) {
            idx_fail(images_path, off + static_cast<std::size_t>(imgs.gcount()),
                     "truncated image " + std::to_string(i));
        }
        off += buf.size();
        auto dst = out.inputs.example(i);
        for (std::size_t k = 0; k < buf.size(); ++k) dst[k] = buf[k] / 255.0;
    }

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw std::runtime_error("idx: cannot open '" + labels_path + "'");
    std::size_t loff = 0;
    const std::uint32_t lmagic = read_be32(labs, labels_path, loff);
    if (lmagic != kIdxLabelsMagic) {
        idx_fail(labels_path, 0,
                 "bad label magic " + std::to_string(lmagic) + " (want " +
                     std::to_string(kIdxLabelsMagic) + ")");
    }
    const std::uint32_t lcount = read_be32(labs, labels_path, loff);
    if (lcount != count) {
        idx_fail(labels_path, 4,
                 "label count " + std::to_string(lcount) + " does not match image count " +
                     std::to_string(count));
    }
    out.labels.resize(lcount);
    std::size_t max_label = 0;
    for (std::uint32_t i = 0; i < lcount; ++i) {
        char b = 0;
        labs.read(&b, 1);
        if (labs.gcount() != 1) idx_fail(labels_path, loff, "truncated label " + std::to_string(i));
        ++loff;
        out.labels[i] = static_cast<unsigned char>(b);
        max_label = std::max(max_label, out.labels[i]);
    }
    out.n_classes = max_label + 1;
    out.split = "test";
    out.validate();
    return out;
}

Dataset make_blobs(std::size_t n_classes, std::size_t n_per_class, Shape3 shape, double spread,
                   std::uint64_t seed) {
    if (n_classes == 0 || n_per_class == 0) {
        throw std::invalid_argument("make_blobs: counts must be positive");
    }
    if (shape.numel() == 0) throw std::invalid_argument("make_blobs: empty shape");
    if (spread < 0.0) throw std::invalid_argument("make_blobs: negative spread");

    Rng rng(seed);
    const std::size_t dim = shape.numel();
    std::vector<std::vector<double>> centers(n_classes, std::vector<double>(dim));
    for (auto& c : centers) {
        for (double& v : c) v = 0.3 + 0.4 * rng.uniform01();
    }

    const std::size_t n = n_classes * n_per_class;
    Dataset out;
    out.inputs = Tensor4({n, shape.c, shape.h, shape.w});
    out.labels.resize(n);
    out.n_classes = n_classes;
    out.split = "train";
    for (std::size_t cls = 0; cls < n_classes; ++cls) {
        for (std::size_t e = 0; e < n_per_class; ++e) {
            const std::size_t i = cls * n_per_class + e;
            out.labels[i] = cls;
            auto dst = out.inputs.example(i);
            for (std::size_t k = 0; k < dim; ++k) {
                dst[k] = std::clamp(centers[cls][k] + spread * rng.gaussian(), 0.0, 1.0);
            }
        }
    }

    // Fisher-Yates with the same generator, so the whole dataset is one
    // deterministic function of the seed.
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = rng.uniform_below(i + 1);
        if (j == i) continue;
        out.labels[i] = std::exchange(out.labels[j], out.labels[i]);
        auto a = out.inputs.example(i);
        auto b = out.inputs.example(j);
        for (std::size_t k = 0; k < a.size(); ++k) std::swap(a[k], b[k]);
    }
    out.validate();
    return out;
}

Tensor4 gather_examples(const Tensor4& inputs, std::span<const std::size_t> idx) {
    const Shape3 es = inputs.example_shape();
    Tensor4 out({idx.size(), es.c, es.h, es.w});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= inputs.shape().d0) {
            throw std::out_of_range("gather_examples: index " + std::to_string(idx[i]));
        }
        auto src = inputs.example(idx[i]);
        auto dst = out.example(i);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

Tensor4 single_example(const Tensor4& inputs, std::size_t i) {
    const std::size_t one[] = {i};
    return gather_examples(inputs, one);
}

}  // namespace lsrs
