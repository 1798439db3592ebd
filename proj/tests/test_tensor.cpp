#include <doctest.h>

#include <cmath>

#include "cnsnet/rng.hpp"
#include "cnsnet/tensor.hpp"
#include "cnsnet/tensor_ops.hpp"
#include "support/oracles.hpp"

using namespace cnsnet;

namespace {

Tensor64 randu(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    auto t = Tensor64::rand_uniform(s, lo, hi, rng);
    t.set_requires_grad(grad);
    return t;
}

}  // namespace

TEST_CASE("conv2d trivial values") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor out = conv2d(x, k, Tensor(), 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out.item() == doctest::Approx(9.0f));

    Tensor ident = Tensor::full({1, 1, 1, 1}, 1.0f);
    Rng rng(7);
    Tensor xr = Tensor::rand_uniform({1, 1, 4, 5}, -2.0f, 2.0f, rng);
    Tensor same = conv2d(xr, ident, Tensor(), 1, 0);
    REQUIRE(same.numel() == xr.numel());
    for (int i = 0; i < xr.numel(); ++i) CHECK(same.data()[i] == doctest::Approx(xr.data()[i]));
}

TEST_CASE("conv2d matches naive loop oracle") {
    Rng rng(11);
    Tensor x = Tensor::rand_uniform({1, 2, 5, 5}, -10.0f, 10.0f, rng);
    Tensor k = Tensor::rand_uniform({3, 2, 3, 3}, -1.0f, 1.0f, rng);
    Tensor b = Tensor::rand_uniform({3}, -1.0f, 1.0f, rng);
    Tensor out = conv2d(x, k, b, 1, 1);
    auto ref = oracles::conv2d_naive(x.values(), 1, 2, 5, 5, k.values(), 3, 3, 3, b.values(), 1, 1);
    REQUIRE(out.numel() == static_cast<std::int64_t>(ref.size()));
    for (size_t i = 0; i < ref.size(); ++i) CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-6));

    SUBCASE("strided") {
        Tensor out2 = conv2d(x, k, b, 2, 1);
        auto ref2 = oracles::conv2d_naive(x.values(), 1, 2, 5, 5, k.values(), 3, 3, 3, b.values(), 2, 1);
        REQUIRE(out2.numel() == static_cast<std::int64_t>(ref2.size()));
        for (size_t i = 0; i < ref2.size(); ++i) CHECK(out2.data()[i] == doctest::Approx(ref2[i]).epsilon(1e-6));
    }
}

TEST_CASE("conv2d shape errors are descriptive") {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor k = Tensor::zeros({3, 5, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(x, k, Tensor(), 1, 1),
                         doctest::Contains("input channels"), std::invalid_argument);
    Tensor kbig = Tensor::zeros({1, 2, 9, 9});
    CHECK_THROWS_AS(conv2d(x, kbig, Tensor(), 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor(), 0, 0), std::invalid_argument);
}

TEST_CASE("backward on simple graphs") {
    SUBCASE("sum of x -> ones") {
        Tensor x = Tensor::from_data({3}, {1.0f, -2.0f, 5.0f});
        x.set_requires_grad(true);
        backward(sum_all(x));
        for (float g : x.grad()) CHECK(g == doctest::Approx(1.0f));
    }
    SUBCASE("sum of x*x -> 2x") {
        Tensor x = Tensor::from_data({3}, {1.0f, 2.0f, 3.0f});
        x.set_requires_grad(true);
        backward(sum_all(mul(x, x)));
        CHECK(x.grad()[0] == doctest::Approx(2.0f));
        CHECK(x.grad()[1] == doctest::Approx(4.0f));
        CHECK(x.grad()[2] == doctest::Approx(6.0f));
    }
    SUBCASE("non-scalar loss rejected") {
        Tensor x = Tensor::zeros({2, 2});
        x.set_requires_grad(true);
        CHECK_THROWS_AS(backward(x), std::invalid_argument);
    }
    SUBCASE("diamond graph accumulates once per path") {
        Tensor x = Tensor::from_data({2}, {3.0f, -1.0f});
        x.set_requires_grad(true);
        Tensor y = add(mul(x, x), x);  // x^2 + x -> d = 2x + 1
        backward(sum_all(y));
        CHECK(x.grad()[0] == doctest::Approx(7.0f));
        CHECK(x.grad()[1] == doctest::Approx(-1.0f));
    }
}

TEST_CASE("composite conv->norm->attention->sum gradient check") {
    Rng rng(3);
    Tensor64 x = randu({1, 2, 4, 4}, rng);
    Tensor64 k = randu({4, 2, 3, 3}, rng, -0.5, 0.5);
    Tensor64 wq = randu({4, 4}, rng, -0.5, 0.5);
    Tensor64 wk = randu({4, 4}, rng, -0.5, 0.5);

    auto build = [&]() {
        Tensor64 f = conv2d(x, k, Tensor64(), 1, 1);  // [1,4,4,4]
        // instance-style standardization composed from primitives
        Tensor64 mu = reduce_mean(f, {2, 3}, true);
        Tensor64 centered = sub(f, expand(mu, f.shape()));
        Tensor64 var = reduce_mean(square(centered), {2, 3}, true);
        Tensor64 norm = divide(centered, expand(sqrt(add_scalar(var, 1e-5)), f.shape()));
        // single-head attention over pixel tokens
        Tensor64 tokens = transpose2d(reshape(norm, {4, 16}));  // [16,4]
        Tensor64 q = matmul(tokens, wq);
        Tensor64 kk = matmul(tokens, wk);
        Tensor64 scores = mul_scalar(matmul(q, transpose2d(kk)), 0.5);
        Tensor64 att = matmul(softmax(scores, 1), tokens);
        return sum_all(att);
    };
    const double err = oracles::fd_max_rel_error(build, {x, k, wq, wk});
    CHECK(err < 1e-3);
}

TEST_CASE("finite differences pass for every differentiable op") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        Rng rng(seed);
        CAPTURE(seed);

        Tensor64 a = randu({2, 3, 4, 4}, rng);
        Tensor64 b = randu({2, 3, 4, 4}, rng, 0.5, 2.0);  // positive: safe for div/log/sqrt
        Tensor64 m2 = randu({4, 5}, rng);
        Tensor64 s = randu({3}, rng, 0.5, 1.5);
        Tensor64 bias = randu({3}, rng);

        BoolMask mask{{2, 3, 4, 4}, {}};
        mask.v.resize(2 * 3 * 4 * 4);
        for (auto& mv : mask.v) mv = rng.uniform() < 0.4 ? 1 : 0;
        mask.v[0] = 1;  // non-empty selection

        using Fn = std::function<Tensor64()>;
        std::vector<std::pair<const char*, Fn>> cases = {
            {"add", [&] { return sum_all(square(add(a, b))); }},
            {"sub", [&] { return sum_all(square(sub(a, b))); }},
            {"mul", [&] { return sum_all(mul(a, b)); }},
            {"divide", [&] { return sum_all(divide(a, b)); }},
            {"scalar", [&] { return sum_all(add_scalar(mul_scalar(a, 3.0), -1.0)); }},
            {"sub_from_scalar", [&] { return sum_all(square(sub_from_scalar(1.0, a))); }},
            {"abs", [&] { return sum_all(cnsnet::abs(a)); }},
            {"exp", [&] { return sum_all(cnsnet::exp(a)); }},
            {"log", [&] { return sum_all(cnsnet::log(b)); }},
            {"sqrt", [&] { return sum_all(cnsnet::sqrt(b)); }},
            {"sigmoid", [&] { return sum_all(sigmoid(a)); }},
            {"leaky_relu", [&] { return sum_all(leaky_relu(a, 0.2)); }},
            {"reshape", [&] { return sum_all(square(reshape(a, {6, 16}))); }},
            {"transpose2d", [&] { return sum_all(square(transpose2d(m2))); }},
            {"concat_split", [&] {
                 auto parts = split(a, 1, {1, 2});
                 return sum_all(square(concat(std::vector<Tensor64>{parts[1], parts[0]}, 1)));
             }},
            {"slice", [&] { return sum_all(square(slice(a, 2, 1, 2))); }},
            {"expand", [&] { return sum_all(square(expand(reduce_mean(a, {1}, true), a.shape()))); }},
            {"matmul", [&] { return sum_all(square(matmul(m2, transpose2d(m2)))); }},
            {"reduce_sum", [&] { return sum_all(square(reduce_sum(a, {0, 2}, false))); }},
            {"reduce_mean", [&] { return sum_all(square(reduce_mean(a, {1, 3}, true))); }},
            {"reduce_var", [&] { return sum_all(reduce_var(a, {2, 3}, false)); }},
            {"softmax", [&] { return sum_all(square(softmax(m2, 1))); }},
            {"conv2d", [&] {
                 Rng r2(seed + 100);
                 Tensor64 k = randu({2, 3, 3, 3}, r2, -0.5, 0.5);
                 return sum_all(square(conv2d(a, k, Tensor64(), 1, 1)));
             }},
            {"upsample2x_nearest", [&] { return sum_all(square(upsample2x_nearest(a))); }},
            {"upsample2x_bilinear", [&] { return sum_all(square(upsample2x_bilinear(a))); }},
            {"downsample2x", [&] { return sum_all(square(downsample2x(a))); }},
            {"resize_bilinear", [&] { return sum_all(square(resize_bilinear(a, 3, 6))); }},
            {"masked_fill", [&] { return sum_all(square(masked_fill(a, mask, 0.25))); }},
            {"masked_select", [&] { return sum_all(square(masked_select(a, mask))); }},
            {"channel_affine", [&] { return sum_all(square(channel_affine(a, s, bias))); }},
        };
        for (auto& [name, fn] : cases) {
            CAPTURE(name);
            std::vector<Tensor64> leaves = {a, b, m2, s, bias};
            const double err = oracles::fd_max_rel_error(fn, leaves, 1e-4, 24, seed);
            CHECK_MESSAGE(err < 1e-3, name, " rel err ", err);
        }
    }
}

TEST_CASE("softmax rows sum to one and stay positive") {
    Rng rng(5);
    Tensor x = Tensor::rand_uniform({7, 9}, -30.0f, 30.0f, rng);
    Tensor y = softmax(x, 1);
    for (int i = 0; i < 7; ++i) {
        float sum = 0.0f;
        for (int j = 0; j < 9; ++j) {
            const float v = y.at({i, j});
            CHECK(v > 0.0f);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
    }
}

TEST_CASE("reshape round-trip is the identity on data") {
    Rng rng(9);
    Tensor x = Tensor::rand_uniform({2, 3, 5}, -4.0f, 4.0f, rng);
    Tensor y = reshape(reshape(x, {15, 2}), {2, 3, 5});
    CHECK(y.shape() == x.shape());
    for (int i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("expand repeats and masked ops behave") {
    Tensor v = Tensor::from_data({1, 2}, {3.0f, 4.0f});
    Tensor e = expand(v, {3, 2});
    for (int i = 0; i < 3; ++i) {
        CHECK(e.at({i, 0}) == 3.0f);
        CHECK(e.at({i, 1}) == 4.0f);
    }

    BoolMask m{{4}, {1, 0, 0, 1}};
    Tensor x = Tensor::from_data({4}, {1.0f, 2.0f, 3.0f, 4.0f});
    Tensor sel = masked_select(x, m);
    REQUIRE(sel.shape() == Shape{2});
    CHECK(sel.data()[0] == 1.0f);
    CHECK(sel.data()[1] == 4.0f);
    Tensor filled = masked_fill(x, m, -1.0f);
    CHECK(filled.data()[0] == -1.0f);
    CHECK(filled.data()[1] == 2.0f);
    CHECK(filled.data()[3] == -1.0f);
}

TEST_CASE("nearest upsample and strided downsample geometry") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    Tensor up = upsample2x_nearest(x);
    CHECK(up.shape() == Shape{1, 1, 4, 4});
    CHECK(up.at({0, 0, 0, 0}) == 1.0f);
    CHECK(up.at({0, 0, 0, 3}) == 2.0f);
    CHECK(up.at({0, 0, 3, 0}) == 3.0f);
    CHECK(up.at({0, 0, 3, 3}) == 4.0f);

    Tensor down = downsample2x(up);
    CHECK(down.shape() == Shape{1, 1, 2, 2});
    CHECK(down.at({0, 0, 0, 0}) == 1.0f);
    CHECK(down.at({0, 0, 1, 1}) == 4.0f);
}

TEST_CASE("no-grad mode records nothing") {
    Tensor x = Tensor::from_data({2}, {1.0f, 2.0f});
    x.set_requires_grad(true);
    Tensor y;
    {
        NoGradGuard ng;
        y = mul(x, x);
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node->parents.empty());
}
