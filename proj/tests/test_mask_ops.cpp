#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cnsnet/mask_ops.hpp"
#include "cnsnet/rng.hpp"
#include "support/oracles.hpp"

using namespace cnsnet;

namespace {

// Independent scalar route for the soft-mask formula.
std::vector<float> soft_mask_oracle(const Tensor& s, const Tensor& f) {
    const int h = s.dim(1), w = s.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    std::vector<float> out(static_cast<size_t>(plane), 0.0f);
    for (int c = 0; c < 3; ++c) {
        std::vector<double> d(static_cast<size_t>(plane));
        for (std::int64_t i = 0; i < plane; ++i)
            d[static_cast<size_t>(i)] = static_cast<double>(s.data()[c * plane + i]) - f.data()[c * plane + i];
        const double lo = *std::min_element(d.begin(), d.end());
        const double hi = *std::max_element(d.begin(), d.end());
        if (hi == lo) continue;
        for (std::int64_t i = 0; i < plane; ++i)
            out[static_cast<size_t>(i)] += static_cast<float>(std::abs((d[static_cast<size_t>(i)] - lo) / (hi - lo)) / 3.0);
    }
    return out;
}

Tensor brute_dilate(const Tensor& m, int r) {
    const int h = m.dim(0), w = m.dim(1);
    Tensor out = Tensor::zeros({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float v = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    v = std::max(v, m.at({yy, xx}));
                }
            out.data()[y * w + x] = v;
        }
    return out;
}

Tensor random_binary(int h, int w, double p, Rng& rng) {
    Tensor m = Tensor::uninit({h, w});
    for (int i = 0; i < m.numel(); ++i) m.data()[i] = rng.uniform() < p ? 1.0f : 0.0f;
    return m;
}

}  // namespace

TEST_CASE("soft_mask_target trivial and oracle") {
    Rng rng(3);
    Tensor img = Tensor::rand_uniform({3, 4, 4}, 0.0f, 1.0f, rng);
    Tensor zero_mask = soft_mask_target(img, img);
    for (int i = 0; i < zero_mask.numel(); ++i) CHECK(zero_mask.data()[i] == 0.0f);

    SUBCASE("min-max endpoints map to 0 and 1") {
        // per channel, differences take only values {-1, 0}
        Tensor s = Tensor::zeros({3, 1, 2});
        Tensor f = Tensor::zeros({3, 1, 2});
        for (int c = 0; c < 3; ++c) f.data()[c * 2 + 0] = 1.0f;  // diff -1 at x=0, 0 at x=1
        Tensor m = soft_mask_target(s, f);
        // N maps {-1,0} -> {0,1}; |.| keeps {0,1}; mean over 3 identical channels
        CHECK(m.at({0, 0}) == doctest::Approx(0.0));
        CHECK(m.at({0, 1}) == doctest::Approx(1.0));
    }

    SUBCASE("random pair matches the scalar oracle") {
        for (int trial = 0; trial < 20; ++trial) {
            Tensor s = Tensor::rand_uniform({3, 4, 4}, 0.0f, 1.0f, rng);
            Tensor f = Tensor::rand_uniform({3, 4, 4}, 0.0f, 1.0f, rng);
            Tensor m = soft_mask_target(s, f);
            auto ref = soft_mask_oracle(s, f);
            for (int i = 0; i < m.numel(); ++i) {
                CHECK(m.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-6));
                CHECK(m.data()[i] >= 0.0f);
                CHECK(m.data()[i] <= 1.0f);
            }
        }
    }

    CHECK_THROWS_AS(soft_mask_target(img, Tensor::zeros({3, 5, 5})), std::invalid_argument);
}

TEST_CASE("soft_mask_loss values") {
    Tensor a = Tensor::full({4, 4}, 1.0f);
    Tensor b = Tensor::zeros({4, 4});
    CHECK(soft_mask_loss(a, a).item() == doctest::Approx(0.0));
    CHECK(soft_mask_loss(a, b).item() == doctest::Approx(1.0));

    Rng rng(9);
    Tensor p = Tensor::rand_uniform({5, 7}, 0.0f, 1.0f, rng);
    Tensor t = Tensor::rand_uniform({5, 7}, 0.0f, 1.0f, rng);
    double want = 0;
    for (int i = 0; i < p.numel(); ++i) want += std::abs(static_cast<double>(p.data()[i]) - t.data()[i]);
    want /= p.numel();
    CHECK(soft_mask_loss(p, t).item() == doctest::Approx(want).epsilon(1e-7));
    CHECK_THROWS_AS(soft_mask_loss(p, Tensor::zeros({2, 2})), std::invalid_argument);
}

TEST_CASE("dilate identity, block growth, oracle, and composition") {
    Rng rng(13);
    Tensor m = random_binary(9, 9, 0.2, rng);
    Tensor same = dilate(m, 0);
    for (int i = 0; i < m.numel(); ++i) CHECK(same.data()[i] == m.data()[i]);

    Tensor dot = Tensor::zeros({5, 5});
    dot.data()[2 * 5 + 2] = 1.0f;
    Tensor grown = dilate(dot, 1);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            const bool inside = std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1;
            CHECK(grown.at({y, x}) == (inside ? 1.0f : 0.0f));
        }

    Tensor big = random_binary(24, 20, 0.08, rng);
    Tensor fast = dilate(big, 7);
    Tensor ref = brute_dilate(big, 7);
    for (int i = 0; i < big.numel(); ++i) CHECK(fast.data()[i] == ref.data()[i]);

    SUBCASE("monotone and compositional") {
        Tensor d1 = dilate(big, 2);
        for (int i = 0; i < big.numel(); ++i) CHECK(d1.data()[i] >= big.data()[i]);
        Tensor d2 = dilate(d1, 3);
        Tensor d5 = dilate(big, 5);
        for (int i = 0; i < big.numel(); ++i) CHECK(d2.data()[i] == d5.data()[i]);
    }
}

TEST_CASE("resize_mask nearest and bilinear") {
    Rng rng(29);
    Tensor m = random_binary(6, 6, 0.5, rng);
    Tensor same = resize_mask_nearest(m, 6, 6);
    for (int i = 0; i < m.numel(); ++i) CHECK(same.data()[i] == m.data()[i]);

    Tensor checker = Tensor::from_data({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    Tensor one = resize_mask_nearest(checker, 1, 1);
    CHECK(one.at({0, 0}) == 1.0f);  // top-left rule

    SUBCASE("nearest output values stay within the input value set") {
        Tensor down = resize_mask_nearest(m, 4, 3);
        for (int i = 0; i < down.numel(); ++i) {
            CHECK((down.data()[i] == 0.0f || down.data()[i] == 1.0f));
        }
    }

    SUBCASE("bilinear 4x4 -> 2x2 matches the scalar oracle") {
        Tensor soft = Tensor::rand_uniform({4, 4}, 0.0f, 1.0f, rng);
        Tensor small = resize_mask_bilinear(soft, 2, 2);
        // align_corners=false: output (0,0) samples source coord 0.5 -> mean of a 2x2 block
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                const double want = 0.25 * (soft.at({2 * y, 2 * x}) + soft.at({2 * y, 2 * x + 1}) +
                                            soft.at({2 * y + 1, 2 * x}) + soft.at({2 * y + 1, 2 * x + 1}));
                CHECK(small.at({y, x}) == doctest::Approx(want).epsilon(1e-6));
            }
    }
}

TEST_CASE("soft-mask predictor contract") {
    Rng rng(77);
    SoftMaskPredictor pred(8, rng);
    Tensor x = Tensor::rand_uniform({2, 4, 16, 16}, 0.0f, 1.0f, rng);
    Tensor m = pred.forward(x);
    CHECK(m.shape() == Shape{2, 1, 16, 16});
    for (int i = 0; i < m.numel(); ++i) {
        CHECK(m.data()[i] > 0.0f);
        CHECK(m.data()[i] < 1.0f);
    }

    SUBCASE("zero-weight head gives the constant 0.5 mask") {
        for (auto& v : pred.head.w.node->value) v = 0.0f;
        for (auto& v : pred.head.b.node->value) v = 0.0f;
        Tensor mid = pred.forward(x);
        for (int i = 0; i < mid.numel(); ++i) CHECK(mid.data()[i] == doctest::Approx(0.5f));
    }

    CHECK_THROWS_AS(pred.forward(Tensor::zeros({1, 4, 12, 12})), std::invalid_argument);
    CHECK_THROWS_AS(pred.forward(Tensor::zeros({1, 3, 16, 16})), std::invalid_argument);
}
