#include "doctest.h"

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ichseq/augmentation.hpp"
#include "ichseq/errors.hpp"
#include "ichseq/imageops.hpp"

using namespace ichseq;
using namespace ichseq::augment;
using testutil::random_tensor;

namespace {

bool all_finite(const Tensor& t) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

AugmentConfig everything_on() {
    AugmentConfig c;
    c.crop_prob = c.rotate_prob = c.hflip_prob = c.vflip_prob = 1.0;
    c.optical_prob = c.grid_prob = c.noise_prob = 1.0;
    c.distortion_strength = 0.1;
    c.noise_sigma = 0.05;
    return c;
}

}  // namespace

TEST_CASE("disabled augmentation is the identity") {
    std::mt19937_64 g(1);
    const Tensor img = random_tensor({3, 17, 13}, g, 0.0, 1.0);
    Rng rng = derive_rng(5, 0, 0);
    CHECK(augment_slice(img, AugmentConfig::disabled(), rng) == img);
    const Tensor scan = random_tensor({4, 3, 9, 9}, g, 0.0, 1.0);
    CHECK(augment_scan(scan, AugmentConfig::disabled(), rng) == scan);
}

TEST_CASE("flips are involutions") {
    std::mt19937_64 g(2);
    const Tensor img = random_tensor({3, 6, 7}, g);
    CHECK(imageops::flip_horizontal(imageops::flip_horizontal(img)) == img);
    CHECK(imageops::flip_vertical(imageops::flip_vertical(img)) == img);
    GeometricDraw d;
    d.hflip = true;
    CHECK(apply_geometry(apply_geometry(img, d), d) == img);
    CHECK(imageops::flip_horizontal(img) != img);
}

TEST_CASE("same seed gives the same augmentation") {
    std::mt19937_64 g(3);
    const Tensor img = random_tensor({3, 16, 16}, g, 0.0, 1.0);
    const AugmentConfig cfg = everything_on();
    Rng a = derive_rng(11, 2, 3, 4), b = derive_rng(11, 2, 3, 4), c = derive_rng(11, 2, 3, 5);
    const Tensor x = augment_slice(img, cfg, a);
    CHECK(x == augment_slice(img, cfg, b));
    CHECK(x != augment_slice(img, cfg, c));
}

TEST_CASE("augmentation preserves shape and finiteness") {
    std::mt19937_64 g(4);
    const Tensor img = random_tensor({3, 20, 24}, g, 0.0, 1.0);
    AugmentConfig cfg = everything_on();
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        cfg.distortion_strength = 0.01 * static_cast<double>(seed % 40);
        cfg.rotation_range_deg = {0.0, 30.0};
        Rng rng = derive_rng(seed, 0, 0);
        const Tensor out = augment_slice(img, cfg, rng);
        CHECK(out.shape() == img.shape());
        CHECK(all_finite(out));
    }
}

TEST_CASE("scan augmentation shares one geometric draw") {
    std::mt19937_64 g(5);
    const Tensor slice = random_tensor({3, 12, 12}, g, 0.0, 1.0);
    Tensor scan({3, 3, 12, 12});
    for (std::size_t k = 0; k < 3; ++k) std::copy(slice.data(), slice.data() + slice.size(), scan.data() + k * slice.size());
    AugmentConfig cfg = everything_on();
    cfg.noise_prob = 0.0;
    Rng rng = derive_rng(1, 0, 0);
    const Tensor out = augment_scan(scan, cfg, rng);
    const std::size_t n = slice.size();
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(out[i] == out[n + i]);
        CHECK(out[i] == out[2 * n + i]);
    }
}

TEST_CASE("derived streams depend on every coordinate") {
    auto first = [](Rng r) { return r(); };
    const auto base = first(derive_rng(1, 2, 3, 4));
    CHECK(base == first(derive_rng(1, 2, 3, 4)));
    CHECK(base != first(derive_rng(9, 2, 3, 4)));
    CHECK(base != first(derive_rng(1, 9, 3, 4)));
    CHECK(base != first(derive_rng(1, 2, 9, 4)));
    CHECK(base != first(derive_rng(1, 2, 3, 9)));
}

TEST_CASE("invalid augmentation config") {
    AugmentConfig c;
    c.hflip_prob = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = AugmentConfig{};
    c.cutmix_alpha = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = AugmentConfig{};
    c.crop_scale_range = {0.9, 0.8};
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("cutmix degenerate and full boxes") {
    std::mt19937_64 g(6);
    const Tensor imgs = random_tensor({3, 2, 8, 10}, g);
    Tensor labels({3, 6});
    for (double& v : labels.values()) v = static_cast<double>(g() % 2);
    const std::vector<std::size_t> partner{2, 0, 1};

    Rng rng = derive_rng(0, 0, 0);
    const CutBox empty = sample_cut_box(1.0, 8, 10, rng);
    CHECK(empty.area() == 0);
    const auto none = cutmix_with(imgs, labels, partner, empty);
    CHECK(none.lambda_adjusted == 1.0);
    CHECK(none.mixed_images == imgs);
    CHECK(none.mixed_labels == labels);

    const auto full = cutmix_with(imgs, labels, partner, CutBox{0, 0, 10, 8});
    CHECK(full.lambda_adjusted == 0.0);
    const std::size_t per = 2 * 8 * 10;
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t i = 0; i < per; ++i) CHECK(full.mixed_images[b * per + i] == imgs[partner[b] * per + i]);
        for (std::size_t q = 0; q < 6; ++q) CHECK(full.mixed_labels[b * 6 + q] == labels[partner[b] * 6 + q]);
    }
}

TEST_CASE("quarter-area box mixes labels at 0.75") {
    const Tensor imgs({2, 1, 8, 8}, 0.0);
    Tensor labels({2, 6}, 0.0);
    for (std::size_t q = 0; q < 6; ++q) labels[q] = 1.0;
    const std::vector<std::size_t> partner{1, 0};
    const auto r = cutmix_with(imgs, labels, partner, CutBox{2, 2, 6, 6});
    CHECK(r.lambda_adjusted == 0.75);
    CHECK(r.mixed_labels[0] == 0.75);
    CHECK(r.mixed_labels[6] == 0.25);
}

TEST_CASE("cutmix pixels match an explicit mask reconstruction") {
    std::mt19937_64 g(7);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t b = 2 + g() % 4, c = 3, h = 5 + g() % 12, w = 5 + g() % 12;
        const Tensor imgs = random_tensor({b, c, h, w}, g);
        Tensor labels({b, 6});
        for (double& v : labels.values()) v = static_cast<double>(g() % 2);
        Rng rng = derive_rng(static_cast<std::uint64_t>(trial), 0, 0);
        const auto r = cutmix_batch(imgs, labels, 1.0, rng);
        CHECK(r.lambda_adjusted == doctest::Approx(1.0 - double(r.box.area()) / double(h * w)).epsilon(1e-15));
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t j = r.partner[i];
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        const bool inside = y >= r.box.y1 && y < r.box.y2 && x >= r.box.x1 && x < r.box.x2;
                        const std::size_t src = inside ? j : i;
                        const std::size_t off = (ch * h + y) * w + x;
                        CHECK(r.mixed_images[i * c * h * w + off] == imgs[src * c * h * w + off]);
                    }
                }
            }
            for (std::size_t q = 0; q < 6; ++q) {
                const double ya = labels[i * 6 + q], yb = labels[j * 6 + q];
                const double m = r.mixed_labels[i * 6 + q];
                CHECK(m >= std::min(ya, yb) - 1e-15);
                CHECK(m <= std::max(ya, yb) + 1e-15);
                CHECK(m == doctest::Approx(r.lambda_adjusted * ya + (1 - r.lambda_adjusted) * yb).epsilon(1e-15));
            }
        }
    }
}

TEST_CASE("cutmix with a single sample is a no-op") {
    std::mt19937_64 g(8);
    const Tensor imgs = random_tensor({1, 3, 6, 6}, g);
    const Tensor labels({1, 6}, 1.0);
    Rng rng = derive_rng(0, 0, 0);
    const auto r = cutmix_batch(imgs, labels, 1.0, rng);
    CHECK(r.lambda_adjusted == 1.0);
    CHECK(r.mixed_images == imgs);
    CHECK(r.mixed_labels == labels);
}

TEST_CASE("sequence cutmix only touches positions valid in both scans") {
    std::mt19937_64 g(9);
    const Tensor imgs = random_tensor({2, 3, 1, 6, 6}, g);
    Tensor labels({2, 3, 6}, 0.0);
    for (std::size_t q = 0; q < 18; ++q) labels[q] = 1.0;
    const std::vector<std::size_t> lengths{3, 1};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = derive_rng(seed, 0, 0);
        const auto r = cutmix_sequences(imgs, labels, lengths, 1.0, rng);
        // Positions 1 and 2 of scan 0 have no partner slice.
        for (std::size_t i = 36; i < 108; ++i) CHECK(r.mixed_images[i] == imgs[i]);
        for (std::size_t q = 6; q < 18; ++q) CHECK(r.mixed_labels[q] == 1.0);
    }
}

TEST_CASE("beta draws stay in the unit interval with mean one half") {
    Rng rng = derive_rng(3, 0, 0);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = sample_beta(1.0, 1.0, rng);
        REQUIRE(x >= 0.0);
        REQUIRE(x <= 1.0);
        sum += x;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}
