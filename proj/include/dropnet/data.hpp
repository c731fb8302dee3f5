#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropnet/rng.hpp"
#include "dropnet/tensor.hpp"

namespace dropnet {

template <class T>
struct Dataset {
    Tensor<T> images;        // [N x C x H x W], values in [0,1]
    std::vector<int> labels; // in [0, classes)
    std::string split;       // train | val | test

    std::size_t size() const { return labels.size(); }
    std::size_t sample_elems() const { return images.size() / labels.size(); }
};

template <class T>
struct DatasetTriple {
    Dataset<T> train, val, test;
    std::size_t classes = 10;
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& file) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error(file + ": truncated header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline std::string find_existing(const std::string& dir,
                                 std::initializer_list<const char*> names) {
    for (const char* n : names) {
        std::string path = dir + "/" + n;
        if (std::ifstream(path, std::ios::binary).good()) return path;
    }
    throw std::runtime_error("dataset file not found in " + dir + " (tried " +
                             std::string(*names.begin()) + ")");
}

}  // namespace detail

// ---- MNIST IDX ------------------------------------------------------------

inline std::vector<std::uint8_t> read_idx_images(const std::string& path,
                                                 std::size_t& n, std::size_t& h,
                                                 std::size_t& w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    if (detail::read_be32(in, path) != 0x00000803u)
        throw std::runtime_error(path + ": bad image magic");
    n = detail::read_be32(in, path);
    h = detail::read_be32(in, path);
    w = detail::read_be32(in, path);
    std::vector<std::uint8_t> raw(n * h * w);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw std::runtime_error(path + ": truncated image data");
    return raw;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::string& path, std::size_t& n) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    if (detail::read_be32(in, path) != 0x00000801u)
        throw std::runtime_error(path + ": bad label magic");
    n = detail::read_be32(in, path);
    std::vector<std::uint8_t> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw std::runtime_error(path + ": truncated label data");
    return raw;
}

inline void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels,
                             std::size_t n, std::size_t h, std::size_t w) {
    std::ofstream out(path, std::ios::binary);
    auto be32 = [&out](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    be32(0x00000803u);
    be32(static_cast<std::uint32_t>(n));
    be32(static_cast<std::uint32_t>(h));
    be32(static_cast<std::uint32_t>(w));
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

inline void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    auto be32 = [&out](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    be32(0x00000801u);
    be32(static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

template <class T>
Dataset<T> dataset_from_bytes(const std::vector<std::uint8_t>& pixels,
                              const std::vector<std::uint8_t>& labels, std::size_t c,
                              std::size_t h, std::size_t w, std::size_t first,
                              std::size_t count, const std::string& split) {
    Dataset<T> d;
    d.split = split;
    d.images = Tensor<T>({count, c, h, w});
    const std::size_t per = c * h * w;
    for (std::size_t i = 0; i < count * per; ++i)
        d.images.data[i] = static_cast<T>(pixels[first * per + i]) / static_cast<T>(255);
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                    labels.begin() + static_cast<std::ptrdiff_t>(first + count));
    return d;
}

// 54000 train / 6000 val (tail of the official training order) / 10000 test.
template <class T>
DatasetTriple<T> load_mnist(const std::string& dir) {
    std::size_t n, h, w, nl;
    auto timg = read_idx_images(
        detail::find_existing(dir, {"train-images-idx3-ubyte", "train-images.idx3-ubyte"}), n, h, w);
    auto tlab = read_idx_labels(
        detail::find_existing(dir, {"train-labels-idx1-ubyte", "train-labels.idx1-ubyte"}), nl);
    if (n != nl) throw std::runtime_error("mnist: train image/label count mismatch");
    std::size_t val_n = n / 10;  // 6000 of 60000
    if (n == 60000) val_n = 6000;
    const std::size_t train_n = n - val_n;

    std::size_t tn, th, tw, tnl;
    auto simg = read_idx_images(
        detail::find_existing(dir, {"t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"}), tn, th, tw);
    auto slab = read_idx_labels(
        detail::find_existing(dir, {"t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"}), tnl);
    if (tn != tnl) throw std::runtime_error("mnist: test image/label count mismatch");
    if (th != h || tw != w) throw std::runtime_error("mnist: test image size mismatch");

    for (auto b : tlab)
        if (b > 9) throw std::runtime_error("mnist: label out of range");

    DatasetTriple<T> out;
    out.classes = 10;
    std::vector<std::uint8_t> tlab8(tlab.begin(), tlab.end());
    out.train = dataset_from_bytes<T>(timg, tlab8, 1, h, w, 0, train_n, "train");
    out.val = dataset_from_bytes<T>(timg, tlab8, 1, h, w, train_n, val_n, "val");
    std::vector<std::uint8_t> slab8(slab.begin(), slab.end());
    out.test = dataset_from_bytes<T>(simg, slab8, 1, th, tw, 0, tn, "test");
    return out;
}

// ---- CIFAR-10 binary batches ------------------------------------------------

// One record = 1 label byte + 3072 pixel bytes (R, G, B planes of 32x32).
inline void read_cifar_batch_into(const std::string& path, std::vector<std::uint8_t>& pixels,
                                  std::vector<std::uint8_t>& labels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    constexpr std::size_t kRecord = 3073;
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() % kRecord != 0)
        throw std::runtime_error(path + ": size is not a multiple of 3073");
    const std::size_t records = buf.size() / kRecord;
    if (records != 10000) throw std::runtime_error(path + ": expected 10000 records");
    for (std::size_t r = 0; r < records; ++r) {
        const auto* rec = reinterpret_cast<const std::uint8_t*>(buf.data() + r * kRecord);
        if (rec[0] > 9) throw std::runtime_error(path + ": label out of range");
        labels.push_back(rec[0]);
        pixels.insert(pixels.end(), rec + 1, rec + kRecord);
    }
}

// 45000 train / 5000 val (tail of batch 5) / 10000 test.
template <class T>
DatasetTriple<T> load_cifar10(const std::string& dir) {
    std::vector<std::uint8_t> pixels, labels;
    for (int b = 1; b <= 5; ++b)
        read_cifar_batch_into(dir + "/data_batch_" + std::to_string(b) + ".bin", pixels, labels);
    std::vector<std::uint8_t> tpixels, tlabels;
    read_cifar_batch_into(dir + "/test_batch.bin", tpixels, tlabels);

    DatasetTriple<T> out;
    out.classes = 10;
    out.train = dataset_from_bytes<T>(pixels, labels, 3, 32, 32, 0, 45000, "train");
    out.val = dataset_from_bytes<T>(pixels, labels, 3, 32, 32, 45000, 5000, "val");
    out.test = dataset_from_bytes<T>(tpixels, tlabels, 3, 32, 32, 0, 10000, "test");
    return out;
}

// ---- synthetic blobs ----------------------------------------------------------

// Gaussian clusters at deterministic centers; 80/10/10 split. When dims is a
// perfect square the images are laid out sqrt(dims) x sqrt(dims) so CNN models
// can consume them; otherwise 1 x dims (FC only).
template <class T>
DatasetTriple<T> synthetic_blobs(std::size_t classes, std::size_t dims,
                                 std::size_t n_per_class, double sigma,
                                 std::uint64_t seed, bool as_image = false) {
    if (classes < 2) throw std::invalid_argument("synthetic_blobs: classes must be >= 2");
    std::size_t side = 1;
    while (side * side < dims) ++side;
    const bool square = side * side == dims;
    if (as_image && !square)
        throw std::invalid_argument("synthetic_blobs: dims must be a perfect square for image shape");

    Rng root(seed);
    Rng crng = root.fork("centers");
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dims));
    for (auto& c : centers)
        for (auto& v : c) v = crng.uniform(0.0, 1.0);

    const std::size_t total = classes * n_per_class;
    std::vector<std::vector<T>> samples(total);
    std::vector<int> labels(total);
    Rng srng = root.fork("samples");
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const std::size_t idx = c * n_per_class + i;
            labels[idx] = static_cast<int>(c);
            samples[idx].resize(dims);
            for (std::size_t d = 0; d < dims; ++d) {
                double v = centers[c][d] + sigma * srng.normal();
                samples[idx][d] = static_cast<T>(std::min(1.0, std::max(0.0, v)));
            }
        }

    std::vector<std::size_t> perm(total);
    for (std::size_t i = 0; i < total; ++i) perm[i] = i;
    Rng prng = root.fork("permute");
    prng.shuffle(perm);

    const std::size_t n_train = total * 8 / 10;
    const std::size_t n_val = total / 10;
    const std::size_t n_test = total - n_train - n_val;
    const std::size_t h = square ? side : 1;
    const std::size_t w = square ? side : dims;

    auto make = [&](std::size_t first, std::size_t count, const char* split) {
        Dataset<T> d;
        d.split = split;
        d.images = Tensor<T>({count, 1, h, w});
        d.labels.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t src = perm[first + i];
            std::copy(samples[src].begin(), samples[src].end(),
                      d.images.data.begin() + static_cast<std::ptrdiff_t>(i * dims));
            d.labels[i] = labels[src];
        }
        return d;
    };

    DatasetTriple<T> out;
    out.classes = classes;
    out.train = make(0, n_train, "train");
    out.val = make(n_train, n_val, "val");
    out.test = make(n_train + n_val, n_test, "test");
    return out;
}

// ---- batching --------------------------------------------------------------

// Epoch-shuffled index batches; the final partial batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                                     Rng& rng) {
    if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t at = 0; at < n; at += batch_size) {
        const std::size_t sz = std::min(batch_size, n - at);
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(at),
                         idx.begin() + static_cast<std::ptrdiff_t>(at + sz));
    }
    return out;
}

template <class T>
void gather(const Dataset<T>& d, const std::vector<std::size_t>& idx, Tensor<T>& images,
            std::vector<int>& labels) {
    const std::size_t per = d.sample_elems();
    std::vector<std::size_t> shape = d.images.shape;
    shape[0] = idx.size();
    images = Tensor<T>(shape);
    labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(d.images.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                    images.data.begin() + static_cast<std::ptrdiff_t>(i * per));
        labels[i] = d.labels[idx[i]];
    }
}

// First-n subset, order preserving.
template <class T>
Dataset<T> take(const Dataset<T>& d, std::size_t n) {
    n = std::min(n, d.size());
    Dataset<T> out;
    out.split = d.split;
    std::vector<std::size_t> shape = d.images.shape;
    shape[0] = n;
    out.images = Tensor<T>(shape);
    const std::size_t per = d.sample_elems();
    std::copy_n(d.images.data.begin(), n * per, out.images.data.begin());
    out.labels.assign(d.labels.begin(), d.labels.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

}  // namespace dropnet
