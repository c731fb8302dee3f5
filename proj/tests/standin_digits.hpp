#pragma once

// Deterministic MNIST-shaped stand-in dataset: 28x28 grayscale renderings of
// seven-segment digits with random shift, brightness and pixel noise, written
// out in IDX format. Used by tests when no real MNIST files are available so
// the full load_mnist path is still exercised.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dropnet/data.hpp"
#include "dropnet/rng.hpp"

namespace standin {

// Segment order: top, top-right, bottom-right, bottom, bottom-left,
// top-left, middle.
inline const bool* segments_for(int digit) {
    static const bool table[10][7] = {
        {1, 1, 1, 1, 1, 1, 0},  // 0
        {0, 1, 1, 0, 0, 0, 0},  // 1
        {1, 1, 0, 1, 1, 0, 1},  // 2
        {1, 1, 1, 1, 0, 0, 1},  // 3
        {0, 1, 1, 0, 0, 1, 1},  // 4
        {1, 0, 1, 1, 0, 1, 1},  // 5
        {1, 0, 1, 1, 1, 1, 1},  // 6
        {1, 1, 1, 0, 0, 0, 0},  // 7
        {1, 1, 1, 1, 1, 1, 1},  // 8
        {1, 1, 1, 1, 0, 1, 1},  // 9
    };
    return table[digit];
}

inline void render_digit(std::uint8_t* img, int digit, int dx, int dy, double brightness,
                         double noise_sigma, dropnet::Rng& rng) {
    const int W = 28, H = 28;
    double canvas[28 * 28] = {0};
    // Glyph box: x in [8, 18], y in [4, 24), stroke width 3.
    const int x0 = 8 + dx, x1 = 18 + dx, y0 = 4 + dy, ym = 14 + dy, y1 = 24 + dy;
    auto hbar = [&](int y) {
        for (int yy = y - 1; yy <= y + 1; ++yy)
            for (int xx = x0; xx <= x1; ++xx)
                if (yy >= 0 && yy < H && xx >= 0 && xx < W) canvas[yy * W + xx] = 1.0;
    };
    auto vbar = [&](int x, int ya, int yb) {
        for (int xx = x - 1; xx <= x + 1; ++xx)
            for (int yy = ya; yy <= yb; ++yy)
                if (yy >= 0 && yy < H && xx >= 0 && xx < W) canvas[yy * W + xx] = 1.0;
    };
    const bool* seg = segments_for(digit);
    if (seg[0]) hbar(y0);
    if (seg[1]) vbar(x1, y0, ym);
    if (seg[2]) vbar(x1, ym, y1);
    if (seg[3]) hbar(y1);
    if (seg[4]) vbar(x0, ym, y1);
    if (seg[5]) vbar(x0, y0, ym);
    if (seg[6]) hbar(ym);

    for (int i = 0; i < W * H; ++i) {
        double v = canvas[i] * brightness + noise_sigma * rng.normal();
        v = std::min(1.0, std::max(0.0, v));
        img[i] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }
}

struct Raw {
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> labels;
};

inline Raw generate(std::size_t n, std::uint64_t seed, double noise_sigma = 0.3) {
    Raw out;
    out.pixels.resize(n * 28 * 28);
    out.labels.resize(n);
    dropnet::Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int digit = static_cast<int>(rng.index(10));
        const int dx = static_cast<int>(rng.index(7)) - 3;
        const int dy = static_cast<int>(rng.index(7)) - 3;
        const double brightness = rng.uniform(0.5, 1.0);
        out.labels[i] = static_cast<std::uint8_t>(digit);
        render_digit(out.pixels.data() + i * 28 * 28, digit, dx, dy, brightness, noise_sigma,
                     rng);
    }
    return out;
}

// Writes train/test IDX files so dropnet::load_mnist can consume the
// directory like a real MNIST tree.
inline void write_idx_tree(const std::filesystem::path& dir, std::size_t n_train,
                           std::size_t n_test, std::uint64_t seed = 20260826,
                           double noise_sigma = 0.3) {
    std::filesystem::create_directories(dir);
    auto train = generate(n_train, seed, noise_sigma);
    auto test = generate(n_test, seed + 1, noise_sigma);
    dropnet::write_idx_images((dir / "train-images-idx3-ubyte").string(), train.pixels,
                              n_train, 28, 28);
    dropnet::write_idx_labels((dir / "train-labels-idx1-ubyte").string(), train.labels);
    dropnet::write_idx_images((dir / "t10k-images-idx3-ubyte").string(), test.pixels, n_test,
                              28, 28);
    dropnet::write_idx_labels((dir / "t10k-labels-idx1-ubyte").string(), test.labels);
}

}  // namespace standin
