#pragma once

// Test-only reference implementations, kept independent of the library's
// code paths so they can serve as oracles.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "cnsnet/rng.hpp"
#include "cnsnet/tensor.hpp"
#include "cnsnet/tensor_ops.hpp"

namespace oracles {

// Plain quadruple-loop cross-correlation, zero padding.
template <typename T>
std::vector<T> conv2d_naive(const std::vector<T>& x, int n, int c, int h, int w,
                            const std::vector<T>& k, int co, int kh, int kw,
                            const std::vector<T>& bias, int stride, int pad) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<T> out(static_cast<size_t>(n) * co * oh * ow, T(0));
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < co; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    double acc = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<size_t>(o)]);
                    for (int ci = 0; ci < c; ++ci)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                const int sy = y * stride + i - pad;
                                const int sx = xx * stride + j - pad;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                                const double xv = x[((static_cast<size_t>(b) * c + ci) * h + sy) * w + sx];
                                const double kv = k[((static_cast<size_t>(o) * c + ci) * kh + i) * kw + j];
                                acc += xv * kv;
                            }
                    out[((static_cast<size_t>(b) * co + o) * oh + y) * ow + xx] = static_cast<T>(acc);
                }
    return out;
}

// Central finite differences against tape gradients, 64-bit. `build` must
// reconstruct the scalar loss from the current leaf values on every call.
// Relative error uses a small floor so near-zero gradients are compared
// absolutely instead of blowing up the ratio.
inline double fd_max_rel_error(const std::function<cnsnet::Tensor64()>& build,
                               std::vector<cnsnet::Tensor64> leaves, double h = 1e-4,
                               int max_coords_per_leaf = 64, std::uint64_t seed = 1) {
    using cnsnet::backward;
    for (auto& l : leaves) l.zero_grad();
    cnsnet::Tensor64 loss = build();
    backward(loss);
    std::vector<std::vector<double>> grads;
    grads.reserve(leaves.size());
    for (auto& l : leaves) {
        grads.push_back(l.grad().empty() ? std::vector<double>(static_cast<size_t>(l.numel()), 0.0)
                                         : l.grad());
    }

    cnsnet::Rng rng(seed);
    double max_rel = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        const std::int64_t n = leaf.numel();
        std::vector<std::int64_t> coords;
        if (n <= max_coords_per_leaf) {
            for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < max_coords_per_leaf; ++i)
                coords.push_back(rng.uniform_int(0, static_cast<int>(n) - 1));
        }
        for (std::int64_t ci : coords) {
            double* v = leaf.data() + ci;
            const double orig = *v;
            cnsnet::NoGradGuard ng;
            *v = orig + h;
            const double fp = build().item();
            *v = orig - h;
            const double fm = build().item();
            *v = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = grads[li][static_cast<size_t>(ci)];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
            max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
        }
    }
    return max_rel;
}

}  // namespace oracles
