#include <doctest.h>

#include <cmath>

#include "cnsnet/rng.hpp"
#include "cnsnet/saat.hpp"
#include "cnsnet/tensor_ops.hpp"
#include "support/oracles.hpp"

using namespace cnsnet;

namespace {

// Plain (unmasked) attention by direct computation, single head.
std::vector<double> plain_attention_oracle(const Tensor64& tokens, const Tensor64& wq, const Tensor64& wk,
                                           const Tensor64& wv, const Tensor64& wp, int c) {
    const int n = tokens.dim(0);
    auto matmul_raw = [](const std::vector<double>& a, const std::vector<double>& b, int m, int k, int nn) {
        std::vector<double> out(static_cast<size_t>(m) * nn, 0.0);
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk)
                for (int j = 0; j < nn; ++j)
                    out[static_cast<size_t>(i) * nn + j] += a[static_cast<size_t>(i) * k + kk] * b[static_cast<size_t>(kk) * nn + j];
        return out;
    };
    auto q = matmul_raw(tokens.values(), wq.values(), n, c, c);
    auto k = matmul_raw(tokens.values(), wk.values(), n, c, c);
    auto v = matmul_raw(tokens.values(), wv.values(), n, c, c);
    std::vector<double> scores(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0;
            for (int d = 0; d < c; ++d) acc += q[static_cast<size_t>(i) * c + d] * k[static_cast<size_t>(j) * c + d];
            scores[static_cast<size_t>(i) * n + j] = acc / std::sqrt(static_cast<double>(c));
        }
    for (int i = 0; i < n; ++i) {
        double mx = scores[static_cast<size_t>(i) * n];
        for (int j = 1; j < n; ++j) mx = std::max(mx, scores[static_cast<size_t>(i) * n + j]);
        double sum = 0;
        for (int j = 0; j < n; ++j) {
            scores[static_cast<size_t>(i) * n + j] = std::exp(scores[static_cast<size_t>(i) * n + j] - mx);
            sum += scores[static_cast<size_t>(i) * n + j];
        }
        for (int j = 0; j < n; ++j) scores[static_cast<size_t>(i) * n + j] /= sum;
    }
    auto att = matmul_raw(scores, v, n, n, c);
    return matmul_raw(att, wp.values(), n, c, c);
}

}  // namespace

TEST_CASE("tokenize round trip and ordering") {
    SUBCASE("1x1 grid is the pixel vector") {
        Tensor x = Tensor::from_data({1, 1, 3}, {1.0f, 2.0f, 3.0f});
        Tensor m = Tensor::from_data({1, 1}, {0.25f});
        auto [grid, mt] = tokenize(x, m);
        CHECK(grid.tokens.shape() == Shape{1, 3});
        CHECK(grid.tokens.data()[1] == 2.0f);
        CHECK(mt.shape() == Shape{1, 1});
        CHECK(mt.data()[0] == 0.25f);
    }
    SUBCASE("2x2 row-major order") {
        Tensor x = Tensor::uninit({2, 2, 1});
        x.data()[0] = 10;
        x.data()[1] = 11;
        x.data()[2] = 12;
        x.data()[3] = 13;  // (0,0),(0,1),(1,0),(1,1)
        Tensor m = Tensor::zeros({2, 2});
        auto [grid, mt] = tokenize(x, m);
        CHECK(grid.tokens.at({0, 0}) == 10);
        CHECK(grid.tokens.at({1, 0}) == 11);
        CHECK(grid.tokens.at({2, 0}) == 12);
        CHECK(grid.tokens.at({3, 0}) == 13);
    }
    SUBCASE("detokenize inverts tokenize exactly") {
        Rng rng(3);
        Tensor x = Tensor::rand_uniform({3, 4, 5}, -1.0f, 1.0f, rng);
        Tensor m = Tensor::zeros({3, 4});
        auto [grid, mt] = tokenize(x, m);
        Tensor back = detokenize(grid, 5);
        for (int i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
    }
    CHECK_THROWS_AS(tokenize(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3})), std::invalid_argument);
}

TEST_CASE("add_positional identities and gradient") {
    Rng rng(11);
    Tensor64 tokens = Tensor64::rand_uniform({4, 3}, -1.0, 1.0, rng);
    Tensor64 mask = Tensor64::rand_uniform({4, 1}, 0.0, 1.0, rng);

    SUBCASE("zero table is the identity on both streams") {
        Tensor64 pe = Tensor64::zeros({4, 3});
        auto [xt, mt] = add_positional(tokens, mask, pe);
        for (int i = 0; i < tokens.numel(); ++i) CHECK(xt.data()[i] == tokens.data()[i]);
        for (int i = 0; i < 4; ++i)
            for (int c = 0; c < 3; ++c) CHECK(mt.at({i, c}) == mask.at({i, 0}));
    }
    SUBCASE("zero tokens pass the table through") {
        Tensor64 pe = Tensor64::rand_uniform({4, 3}, -1.0, 1.0, rng);
        auto [xt, mt] = add_positional(Tensor64::zeros({4, 3}), Tensor64::zeros({4, 1}), pe);
        for (int i = 0; i < pe.numel(); ++i) {
            CHECK(xt.data()[i] == pe.data()[i]);
            CHECK(mt.data()[i] == pe.data()[i]);
        }
    }
    SUBCASE("gradient w.r.t. the positional table") {
        Tensor64 pe = Tensor64::rand_uniform({4, 3}, -0.5, 0.5, rng);
        pe.set_requires_grad(true);
        auto build = [&] {
            auto [xt, mt] = add_positional(tokens, mask, pe);
            return sum_all(square(add(xt, square(mt))));
        };
        CHECK(oracles::fd_max_rel_error(build, {pe}) < 1e-3);
    }
    SUBCASE("grid size mismatch is an error") {
        Tensor64 pe = Tensor64::zeros({9, 3});
        CHECK_THROWS_AS(add_positional(tokens, mask, pe), std::invalid_argument);
    }
}

TEST_CASE("masked attention equals plain attention under the neutral mask") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 6, c = 8;
        Tensor64 tokens = Tensor64::rand_uniform({n, c}, -1.0, 1.0, rng);
        AttentionWeightsT<double> w(c, rng);
        Tensor64 ones = Tensor64::full({n, c}, 1.0);
        for (int heads : {1, 2, 4}) {
            Tensor64 masked = masked_attention(tokens, ones, w, heads, c);
            // plain attention: identical computation with the product dropped
            Tensor64 q = w.q.forward(tokens);
            Tensor64 k = w.k.forward(tokens);
            Tensor64 v = w.v.forward(tokens);
            std::vector<int> hs(static_cast<size_t>(heads), c / heads);
            auto qs = split(q, 1, hs);
            auto ks = split(k, 1, hs);
            auto vs = split(v, 1, hs);
            std::vector<Tensor64> outs;
            for (int h = 0; h < heads; ++h) {
                Tensor64 a = softmax(mul_scalar(matmul(qs[h], transpose2d(ks[h])), 1.0 / std::sqrt(double(c))), 1);
                outs.push_back(matmul(a, vs[h]));
            }
            Tensor64 plain = w.proj.forward(concat(outs, 1));
            for (int i = 0; i < masked.numel(); ++i) {
                CHECK(masked.data()[i] == doctest::Approx(plain.data()[i]).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("singleton token: A=[[1]] and output is V projected") {
    Rng rng(23);
    const int c = 4;
    Tensor64 token = Tensor64::rand_uniform({1, c}, -1.0, 1.0, rng);
    AttentionWeightsT<double> w(c, rng);
    Tensor64 mask = Tensor64::rand_uniform({1, c}, 0.0, 1.0, rng);  // any mask
    Tensor64 out = masked_attention(token, mask, w, 1, c);
    Tensor64 vproj = w.proj.forward(w.v.forward(token));
    for (int i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(vproj.data()[i]).epsilon(1e-9));
}

TEST_CASE("single-head attention matches the scalar oracle") {
    Rng rng(31);
    const int n = 5, c = 4;
    Tensor64 tokens = Tensor64::rand_uniform({n, c}, -1.0, 1.0, rng);
    AttentionWeightsT<double> w(c, rng);
    Tensor64 ones = Tensor64::full({n, c}, 1.0);
    Tensor64 out = masked_attention(tokens, ones, w, 1, c);
    auto ref = plain_attention_oracle(tokens, w.q.w, w.k.w, w.v.w, w.proj.w, c);
    for (int i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-8));

    SUBCASE("hand-set 2x2 weights") {
        Tensor64 t2 = Tensor64::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
        AttentionWeightsT<double> w2(2, rng);
        w2.q.w = Tensor64::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
        w2.k.w = Tensor64::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
        w2.v.w = Tensor64::from_data({2, 2}, {2.0, 0.0, 0.0, 2.0});
        w2.proj.w = Tensor64::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
        Tensor64 m1 = Tensor64::full({2, 2}, 1.0);
        Tensor64 out2 = masked_attention(t2, m1, w2, 1, 2);
        // scores = I/sqrt(2); softmax rows of [s,0;0,s] with s = 1/sqrt(2)
        const double s = 1.0 / std::sqrt(2.0);
        const double p = std::exp(s) / (std::exp(s) + 1.0);
        CHECK(out2.at({0, 0}) == doctest::Approx(2.0 * p).epsilon(1e-9));
        CHECK(out2.at({0, 1}) == doctest::Approx(2.0 * (1.0 - p)).epsilon(1e-9));
        CHECK(out2.at({1, 0}) == doctest::Approx(2.0 * (1.0 - p)).epsilon(1e-9));
        CHECK(out2.at({1, 1}) == doctest::Approx(2.0 * p).epsilon(1e-9));
    }
}

TEST_CASE("key path is bilinear in the mask") {
    Rng rng(43);
    const int n = 4, c = 4;
    Tensor64 tokens = Tensor64::rand_uniform({n, c}, -1.0, 1.0, rng);
    Tensor64 mask = Tensor64::rand_uniform({n, c}, 0.0, 1.0, rng);
    AttentionWeightsT<double> w(c, rng);
    const double t = 0.37;
    // Q K^T built from the public pieces
    Tensor64 q = w.q.forward(tokens);
    Tensor64 k1 = w.k.forward(mul(tokens, mask));
    Tensor64 kt = w.k.forward(mul(tokens, mul_scalar(mask, t)));
    Tensor64 s1 = matmul(q, transpose2d(k1));
    Tensor64 st = matmul(q, transpose2d(kt));
    for (int i = 0; i < s1.numel(); ++i) {
        CHECK(st.data()[i] == doctest::Approx(t * s1.data()[i]).epsilon(1e-9));
    }
}

TEST_CASE("attention rows always sum to one") {
    Rng rng(53);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 7, c = 8;
        Tensor64 tokens = Tensor64::rand_uniform({n, c}, -3.0, 3.0, rng);
        Tensor64 mask = Tensor64::rand_uniform({n, c}, 0.0, 1.0, rng);
        AttentionWeightsT<double> w(c, rng);
        // row-stochasticity of A implies: attention output of constant V rows == that constant
        w.v.w = Tensor64::zeros({c, c});
        Tensor64 out = masked_attention(tokens, mask, w, 2, c);
        for (int i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(0.0).epsilon(1e-12));
        // direct check through softmax
        Tensor64 q = w.q.forward(tokens);
        Tensor64 k = w.k.forward(mul(tokens, mask));
        Tensor64 a = softmax(mul_scalar(matmul(q, transpose2d(k)), 1.0 / std::sqrt(double(c))), 1);
        for (int i = 0; i < n; ++i) {
            double sum = 0;
            for (int j = 0; j < n; ++j) {
                CHECK(a.at({i, j}) > 0.0);
                sum += a.at({i, j});
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("saat block: residual identity with zeroed projections") {
    Rng rng(61);
    SaatConfig cfg;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.grid_h = 3;
    cfg.grid_w = 3;
    SaatBlock blk(cfg, rng);
    for (auto& layer : blk.layers) {
        for (auto& v : layer.att.proj.w.node->value) v = 0.0f;
        for (auto& v : layer.ffn2.w.node->value) v = 0.0f;
        for (auto& v : layer.ffn2.b.node->value) v = 0.0f;
    }
    for (auto& v : blk.pe.node->value) v = 0.0f;
    Tensor x = Tensor::rand_uniform({2, 8, 3, 3}, -1.0f, 1.0f, rng);
    Tensor m = Tensor::rand_uniform({2, 1, 3, 3}, 0.0f, 1.0f, rng);
    Tensor out = blk.forward(x, m);
    REQUIRE(out.shape() == x.shape());
    for (int i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-6));
}

TEST_CASE("saat block: fixed build grid contract") {
    Rng rng(67);
    SaatConfig cfg;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.grid_h = 2;
    cfg.grid_w = 2;
    SaatBlock blk(cfg, rng);
    Tensor ok = Tensor::rand_uniform({1, 8, 2, 2}, -1.0f, 1.0f, rng);
    Tensor m = Tensor::rand_uniform({1, 1, 2, 2}, 0.0f, 1.0f, rng);
    CHECK(blk.forward(ok, m).shape() == ok.shape());
    Tensor bad = Tensor::rand_uniform({1, 8, 4, 4}, -1.0f, 1.0f, rng);
    Tensor mb = Tensor::rand_uniform({1, 1, 4, 4}, 0.0f, 1.0f, rng);
    CHECK_THROWS_WITH_AS(blk.forward(bad, mb), doctest::Contains("build-time grid"), std::invalid_argument);
}

TEST_CASE("saat end-to-end gradient check through both layers") {
    Rng rng(73);
    SaatConfig cfg;
    cfg.channels = 4;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.grid_h = 2;
    cfg.grid_w = 2;
    SaatBlockT<double> blk(cfg, rng);
    Tensor64 x = Tensor64::rand_uniform({1, 4, 2, 2}, -1.0, 1.0, rng);
    x.set_requires_grad(true);
    Tensor64 m = Tensor64::rand_uniform({1, 1, 2, 2}, 0.0, 1.0, rng);
    m.set_requires_grad(true);  // gradient also flows into the mask stream
    ParamMap<double> params;
    blk.collect("saat", params);
    std::vector<Tensor64> leaves = {x, m, blk.pe};
    leaves.push_back(*params.find("saat.layer0.att.q.w"));
    leaves.push_back(*params.find("saat.layer0.att.k.w"));
    leaves.push_back(*params.find("saat.layer1.ffn1.w"));
    leaves.push_back(*params.find("saat.layer0.ln1.gamma"));
    auto build = [&] { return sum_all(square(blk.forward(x, m))); };
    const double err = oracles::fd_max_rel_error(build, leaves, 1e-4, 24, 73);
    CHECK(err < 1e-3);
}
