#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dropnet/data.hpp"
#include "dropnet/model.hpp"
#include "dropnet/train.hpp"

using namespace dropnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dropnet-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

// Tiny fake MNIST: n train and m test images of size 4x4 with label i % 10.
void write_fake_mnist(const fs::path& dir, std::size_t n_train, std::size_t n_test) {
    auto make = [](std::size_t n) {
        std::vector<std::uint8_t> px(n * 16), lb(n);
        for (std::size_t i = 0; i < n; ++i) {
            lb[i] = static_cast<std::uint8_t>(i % 10);
            for (std::size_t j = 0; j < 16; ++j)
                px[i * 16 + j] = static_cast<std::uint8_t>((i * 16 + j) % 256);
        }
        return std::pair{px, lb};
    };
    auto [tp, tl] = make(n_train);
    write_idx_images((dir / "train-images-idx3-ubyte").string(), tp, n_train, 4, 4);
    write_idx_labels((dir / "train-labels-idx1-ubyte").string(), tl);
    auto [sp, sl] = make(n_test);
    write_idx_images((dir / "t10k-images-idx3-ubyte").string(), sp, n_test, 4, 4);
    write_idx_labels((dir / "t10k-labels-idx1-ubyte").string(), sl);
}

}  // namespace

TEST_CASE("idx loader: magics, splits, scaling, determinism") {
    TempDir tmp;
    write_fake_mnist(tmp.path, 60, 20);
    auto d = load_mnist<double>(tmp.path.string());

    // 10% tail of the training order becomes validation.
    CHECK(d.train.size() == 54);
    CHECK(d.val.size() == 6);
    CHECK(d.test.size() == 20);
    CHECK(d.train.size() + d.val.size() == 60);

    // pixel 255 -> 1.0, pixel 0 -> 0.0; everything exactly x/255.
    for (std::size_t i = 0; i < d.train.images.size(); ++i) {
        double v = d.train.images.data[i];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(d.train.images.data[0] == 0.0);           // pixel value 0
    CHECK(d.train.images.data[255] == 1.0);         // pixel value 255
    CHECK(d.train.images.data[128] == doctest::Approx(128.0 / 255.0).epsilon(1e-12));

    // Validation is the tail, order preserved.
    CHECK(d.val.labels[0] == 54 % 10);

    auto d2 = load_mnist<double>(tmp.path.string());
    CHECK(d2.train.images == d.train.images);
    CHECK(d2.test.images == d.test.images);
}

TEST_CASE("idx loader: rejects bad magic and truncation") {
    TempDir tmp;
    write_fake_mnist(tmp.path, 10, 5);

    // Corrupt the image magic.
    {
        std::fstream f(tmp.path / "train-images-idx3-ubyte",
                       std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(3);
        f.put(0x01);  // 0x00000801 is a label magic, not an image magic
    }
    CHECK_THROWS_AS(load_mnist<double>(tmp.path.string()), std::runtime_error);

    write_fake_mnist(tmp.path, 10, 5);
    fs::resize_file(tmp.path / "train-images-idx3-ubyte", 40);
    CHECK_THROWS_AS(load_mnist<double>(tmp.path.string()), std::runtime_error);

    fs::remove(tmp.path / "train-images-idx3-ubyte");
    CHECK_THROWS_AS(load_mnist<double>(tmp.path.string()), std::runtime_error);
}

TEST_CASE("cifar10 loader: record layout, splits, label validation") {
    TempDir tmp;
    // Build five train batches and one test batch of 10000 records each.
    auto write_batch = [&](const std::string& name, std::uint8_t label_base) {
        std::vector<std::uint8_t> buf;
        buf.reserve(10000 * 3073);
        for (std::size_t r = 0; r < 10000; ++r) {
            buf.push_back(static_cast<std::uint8_t>((label_base + r) % 10));
            for (std::size_t j = 0; j < 3072; ++j)
                buf.push_back(static_cast<std::uint8_t>(j % 251));
            // Mark the first red-plane byte of each record for layout checks.
            buf[buf.size() - 3072] = 200;
        }
        std::ofstream out(tmp.path / name, std::ios::binary);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    };
    for (int b = 1; b <= 5; ++b) write_batch("data_batch_" + std::to_string(b) + ".bin", b);
    write_batch("test_batch.bin", 0);

    auto d = load_cifar10<double>(tmp.path.string());
    CHECK(d.train.size() == 45000);
    CHECK(d.val.size() == 5000);
    CHECK(d.test.size() == 10000);
    // Bytes [1..1024] of a record are the red plane: first red pixel is the marker.
    CHECK(d.train.images.data[0] == doctest::Approx(200.0 / 255.0).epsilon(1e-12));
    CHECK(d.train.images.shape == std::vector<std::size_t>{45000, 3, 32, 32});

    // Truncated batch is rejected.
    fs::resize_file(tmp.path / "data_batch_3.bin", 3073 * 9999);
    CHECK_THROWS_AS(load_cifar10<double>(tmp.path.string()), std::runtime_error);
}

TEST_CASE("synthetic blobs: determinism, separability, split disjointness") {
    auto d1 = synthetic_blobs<double>(2, 16, 100, 0.0, 77, true);
    auto d2 = synthetic_blobs<double>(2, 16, 100, 0.0, 77, true);
    CHECK(d1.train.images == d2.train.images);
    CHECK(d1.test.labels == d2.test.labels);
    CHECK(d1.train.size() == 160);
    CHECK(d1.val.size() == 20);
    CHECK(d1.test.size() == 20);

    // sigma = 0: every sample equals its class center, so the nearest-center
    // rule (a linear classifier) is 100% accurate.
    std::vector<std::vector<double>> centers(2);
    for (std::size_t i = 0; i < d1.train.size(); ++i) {
        auto& c = centers[static_cast<std::size_t>(d1.train.labels[i])];
        if (c.empty())
            c.assign(d1.train.images.data.begin() + static_cast<std::ptrdiff_t>(i * 16),
                     d1.train.images.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * 16));
    }
    for (std::size_t i = 0; i < d1.test.size(); ++i) {
        double best = 1e18;
        int arg = -1;
        for (int c = 0; c < 2; ++c) {
            double dist = 0;
            for (std::size_t j = 0; j < 16; ++j) {
                double diff = d1.test.images.data[i * 16 + j] - centers[(std::size_t)c][j];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = c;
            }
        }
        CHECK(arg == d1.test.labels[i]);
    }

    CHECK_THROWS_AS(synthetic_blobs<double>(1, 16, 10, 0.1, 1), std::invalid_argument);
    CHECK_THROWS_AS(synthetic_blobs<double>(2, 15, 10, 0.1, 1, true), std::invalid_argument);
}

TEST_CASE("sanity training: FC8-FC8 on noisy blobs reaches 95% test accuracy") {
    auto d = synthetic_blobs<float>(2, 36, 400, 0.5, 5);
    auto spec = ModelSpec::mlp({1, 6, 6}, {8, 8}, 2);
    Rng rng(1);
    auto model = MaskedModel<float>::build(spec, rng);
    Rng trng(2);
    train_until_early_stop(model, d.train, d.val, 50, 5, 0.1f, 32, trng);
    CHECK(evaluate(model, d.test).accuracy >= 0.95);
}

TEST_CASE("batches: sizes, determinism, exact cover") {
    Rng rng(9);
    auto b = batches(100, 32, rng);
    REQUIRE(b.size() == 4);
    CHECK(b[0].size() == 32);
    CHECK(b[3].size() == 4);

    Rng r1(4), r2(4);
    CHECK(batches(50, 8, r1) == batches(50, 8, r2));

    std::set<std::size_t> seen;
    for (const auto& batch : b)
        for (auto i : batch) CHECK(seen.insert(i).second);
    CHECK(seen.size() == 100);

    Rng r3(1);
    CHECK_THROWS_AS(batches(10, 0, r3), std::invalid_argument);
}
