#include "cnsnet/selftest.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include "cnsnet/colorspace.hpp"
#include "cnsnet/mask_ops.hpp"
#include "cnsnet/metrics.hpp"
#include "cnsnet/model.hpp"
#include "cnsnet/saat.hpp"
#include "cnsnet/soan.hpp"
#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

namespace {

// Central finite differences vs the tape, double precision.
double fd_error(const std::function<Tensor64()>& build, std::vector<Tensor64> leaves, int max_coords,
                std::uint64_t seed) {
    for (auto& l : leaves) l.zero_grad();
    Tensor64 loss = build();
    backward(loss);
    std::vector<std::vector<double>> grads;
    for (auto& l : leaves)
        grads.push_back(l.grad().empty() ? std::vector<double>(static_cast<size_t>(l.numel()), 0.0) : l.grad());

    Rng rng(seed);
    const double h = 1e-4;
    double max_rel = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        const std::int64_t n = leaf.numel();
        std::vector<std::int64_t> coords;
        if (n <= max_coords) {
            for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(0, static_cast<int>(n) - 1));
        }
        NoGradGuard ng;
        for (std::int64_t ci : coords) {
            double* v = leaf.data() + ci;
            const double orig = *v;
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

Tensor64 random_mask64(int h, int w, Rng& rng) {
    Tensor64 m = Tensor64::uninit({h, w});
    for (int i = 0; i < m.numel(); ++i) m.data()[i] = rng.uniform() < 0.45 ? 1.0 : 0.0;
    m.data()[0] = 1.0;
    m.data()[1] = 0.0;
    return m;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

std::vector<CheckResult> run_selftest(std::ostream* out) {
    std::vector<CheckResult> results;
    auto record = [&](const std::string& name, bool pass, const std::string& detail) {
        results.push_back({name, pass, detail});
        if (out) {
            (*out) << (pass ? "[PASS] " : "[FAIL] ") << name;
            if (!detail.empty()) (*out) << "  (" << detail << ")";
            (*out) << "\n";
        }
    };

    {  // conv2d against a direct quadruple loop
        Rng rng(101);
        Tensor x = Tensor::rand_uniform({1, 2, 6, 6}, -5.0f, 5.0f, rng);
        Tensor k = Tensor::rand_uniform({3, 2, 3, 3}, -1.0f, 1.0f, rng);
        Tensor o = conv2d(x, k, Tensor(), 1, 1);
        double max_err = 0;
        for (int co = 0; co < 3; ++co)
            for (int y = 0; y < 6; ++y)
                for (int xx = 0; xx < 6; ++xx) {
                    double acc = 0;
                    for (int c = 0; c < 2; ++c)
                        for (int i = 0; i < 3; ++i)
                            for (int j = 0; j < 3; ++j) {
                                const int sy = y + i - 1, sx = xx + j - 1;
                                if (sy < 0 || sy >= 6 || sx < 0 || sx >= 6) continue;
                                acc += static_cast<double>(x.at({0, c, sy, sx})) * k.at({co, c, i, j});
                            }
                    max_err = std::max(max_err, std::abs(acc - o.at({0, co, y, xx})));
                }
        record("conv2d vs naive loop", max_err < 1e-5, "max abs err " + fmt(max_err));
    }

    {  // gradient checks per operation family
        Rng rng(202);
        Tensor64 x = Tensor64::rand_uniform({1, 2, 4, 4}, -1.0, 1.0, rng);
        x.set_requires_grad(true);
        Tensor64 k = Tensor64::rand_uniform({2, 2, 3, 3}, -0.5, 0.5, rng);
        k.set_requires_grad(true);
        const double conv_err =
            fd_error([&] { return sum_all(square(conv2d(x, k, Tensor64(), 1, 1))); }, {x, k}, 40, 1);
        record("conv2d gradient vs finite differences", conv_err < 1e-3, "rel err " + fmt(conv_err));

        SoanConfig soan_cfg;
        SoanBlockT<double> soan(4, soan_cfg, rng);
        Tensor64 f = Tensor64::rand_uniform({1, 4, 4, 4}, -1.0, 1.0, rng);
        f.set_requires_grad(true);
        Tensor64 mask = random_mask64(4, 4, rng);
        const double soan_err = fd_error([&] { return sum_all(square(soan.forward(f, mask))); }, {f}, 40, 2);
        record("soan_forward gradient vs finite differences", soan_err < 1e-3, "rel err " + fmt(soan_err));

        const int c = 4, n = 4;
        AttentionWeightsT<double> aw(c, rng);
        Tensor64 tokens = Tensor64::rand_uniform({n, c}, -1.0, 1.0, rng);
        tokens.set_requires_grad(true);
        Tensor64 mtok = Tensor64::rand_uniform({n, c}, 0.0, 1.0, rng);
        const double att_err = fd_error(
            [&] { return sum_all(square(masked_attention(tokens, mtok, aw, 2, c))); }, {tokens, aw.q.w}, 40, 3);
        record("masked_attention gradient vs finite differences", att_err < 1e-3, "rel err " + fmt(att_err));

        SaatConfig sc;
        sc.channels = 4;
        sc.heads = 2;
        sc.grid_h = 2;
        sc.grid_w = 2;
        SaatBlockT<double> saat(sc, rng);
        Tensor64 xs = Tensor64::rand_uniform({1, 4, 2, 2}, -1.0, 1.0, rng);
        xs.set_requires_grad(true);
        Tensor64 ms = Tensor64::rand_uniform({1, 1, 2, 2}, 0.0, 1.0, rng);
        const double saat_err = fd_error([&] { return sum_all(square(saat.forward(xs, ms))); }, {xs, saat.pe}, 30, 4);
        record("saat_forward gradient vs finite differences", saat_err < 1e-3, "rel err " + fmt(saat_err));

        Tensor64 outp = Tensor64::rand_uniform({1, 3, 8, 8}, 0.1, 0.9, rng);
        outp.set_requires_grad(true);
        Tensor64 inp = Tensor64::rand_uniform({1, 3, 8, 8}, 0.1, 0.9, rng);
        Tensor64 gt = Tensor64::rand_uniform({1, 3, 8, 8}, 0.1, 0.9, rng);
        Tensor64 dm = random_mask64(8, 8, rng);
        const double grad_err = fd_error([&] { return loss_grad(outp, inp, gt, dm); }, {outp}, 40, 5);
        record("loss_grad gradient vs finite differences", grad_err < 1e-3, "rel err " + fmt(grad_err));

        Rng prng(303);
        PerceptualExtractorT<double> ext(prng);
        const double per_err = fd_error([&] { return loss_per(outp, gt, ext); }, {outp}, 30, 6);
        record("loss_per gradient vs finite differences", per_err < 1e-3, "rel err " + fmt(per_err));
    }

    {  // region-statistics decomposition identities
        Rng rng(404);
        double worst_mean = 0, worst_var = 0;
        for (int trial = 0; trial < 200; ++trial) {
            Tensor64 f = Tensor64::rand_uniform({1, 2, 8, 8}, -3.0, 3.0, rng);
            Tensor64 mask = random_mask64(8, 8, rng);
            auto r = stats_decomposition_check(f, mask);
            worst_mean = std::max(worst_mean, r.mean_residual);
            worst_var = std::max(worst_var, r.var_residual);
        }
        record("mean/variance decomposition identities", worst_mean < 1e-8 && worst_var < 1e-8,
               "residuals " + fmt(worst_mean) + ", " + fmt(worst_var));
    }

    {  // SOAN stat transfer
        Rng rng(505);
        double worst = 0;
        for (int trial = 0; trial < 50; ++trial) {
            Tensor f = Tensor::rand_uniform({1, 4, 8, 8}, -2.0f, 2.0f, rng);
            Tensor mask = Tensor::uninit({8, 8});
            for (int i = 0; i < 64; ++i) mask.data()[i] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
            mask.data()[0] = 1.0f;
            mask.data()[1] = 0.0f;
            SoanBlock blk(8, SoanConfig{}, rng);
            Tensor norm = blk.normalize_half(f, mask);
            auto ns = region_stats(f, mask, MaskRegion::NonShadow, 1e-5f);
            auto s_after = region_stats(norm, mask, MaskRegion::Shadow, 1e-5f);
            for (int i = 0; i < ns.mean.numel(); ++i) {
                worst = std::max(worst, std::abs(static_cast<double>(s_after.mean.data()[i]) - ns.mean.data()[i]));
                worst = std::max(worst, std::abs(static_cast<double>(s_after.stddev.data()[i]) - ns.stddev.data()[i]));
            }
        }
        record("soan stat transfer (shadow adopts non-shadow stats)", worst < 1e-4, "max dev " + fmt(worst));
    }

    {  // neutral-mask attention equivalence + row sums
        Rng rng(606);
        double worst = 0, worst_row = 0;
        for (int trial = 0; trial < 20; ++trial) {
            const int n = 5, c = 8;
            Tensor64 tokens = Tensor64::rand_uniform({n, c}, -1.0, 1.0, rng);
            AttentionWeightsT<double> w(c, rng);
            Tensor64 ones = Tensor64::full({n, c}, 1.0);
            Tensor64 masked = masked_attention(tokens, ones, w, 2, c);
            Tensor64 q = w.q.forward(tokens), k = w.k.forward(tokens), v = w.v.forward(tokens);
            std::vector<int> hs(2, c / 2);
            auto qs = split(q, 1, hs);
            auto ks = split(k, 1, hs);
            auto vs = split(v, 1, hs);
            std::vector<Tensor64> outs;
            for (int hd = 0; hd < 2; ++hd) {
                Tensor64 a =
                    softmax(mul_scalar(matmul(qs[hd], transpose2d(ks[hd])), 1.0 / std::sqrt(double(c))), 1);
                for (int i = 0; i < n; ++i) {
                    double sum = 0;
                    for (int j = 0; j < n; ++j) sum += a.at({i, j});
                    worst_row = std::max(worst_row, std::abs(sum - 1.0));
                }
                outs.push_back(matmul(a, vs[hd]));
            }
            Tensor64 plain = w.proj.forward(concat(outs, 1));
            for (int i = 0; i < masked.numel(); ++i)
                worst = std::max(worst, std::abs(masked.data()[i] - plain.data()[i]));
        }
        record("neutral-mask attention equivalence", worst < 1e-6, "max dev " + fmt(worst));
        record("attention rows sum to one", worst_row < 1e-6, "max dev " + fmt(worst_row));
    }

    {  // metric endpoints
        Tensor black = Tensor::zeros({3, 4, 4});
        Tensor lab = srgb_to_lab(black);
        double dev = 0;
        for (int i = 0; i < lab.numel(); ++i) dev = std::max(dev, std::abs(static_cast<double>(lab.data()[i])));
        Tensor white = Tensor::full({3, 4, 4}, 1.0f);
        Tensor wl = srgb_to_lab(white);
        dev = std::max(dev, std::abs(wl.at({0, 0, 0}) - 100.0));
        dev = std::max(dev, std::abs(static_cast<double>(wl.at({1, 0, 0}))));
        dev = std::max(dev, std::abs(static_cast<double>(wl.at({2, 0, 0}))));
        record("LAB endpoints (black, white)", dev < 1e-3, "max dev " + fmt(dev));

        RegionSelector all{Region::All, Tensor()};
        Tensor a = Tensor::full({3, 16, 16}, 0.4f);
        Tensor b = Tensor::full({3, 16, 16}, 0.5f);
        const double p = psnr(a, b, all);
        const double want = 10.0 * std::log10(1.0 / (0.1 * 0.1));
        const double s = ssim(a, a, all);
        record("psnr uniform-error value and ssim identity",
               std::abs(p - want) < 1e-3 && std::abs(s - 1.0) < 1e-9,
               "psnr " + fmt(p) + " ssim " + fmt(s));
    }

    {  // soft-mask formula oracle
        Rng rng(707);
        double worst = 0;
        bool bounds_ok = true, zero_ok = true;
        for (int trial = 0; trial < 50; ++trial) {
            Tensor s = Tensor::rand_uniform({3, 5, 5}, 0.0f, 1.0f, rng);
            Tensor f = Tensor::rand_uniform({3, 5, 5}, 0.0f, 1.0f, rng);
            Tensor m = soft_mask_target(s, f);
            const std::int64_t plane = 25;
            for (std::int64_t i = 0; i < plane; ++i) {
                double acc = 0;
                for (int c = 0; c < 3; ++c) {
                    double lo = 1e30, hi = -1e30;
                    for (std::int64_t j = 0; j < plane; ++j) {
                        const double d = static_cast<double>(s.data()[c * plane + j]) - f.data()[c * plane + j];
                        lo = std::min(lo, d);
                        hi = std::max(hi, d);
                    }
                    if (hi == lo) continue;
                    const double d = static_cast<double>(s.data()[c * plane + i]) - f.data()[c * plane + i];
                    acc += std::abs((d - lo) / (hi - lo)) / 3.0;
                }
                worst = std::max(worst, std::abs(acc - m.data()[i]));
                if (m.data()[i] < 0.0f || m.data()[i] > 1.0f) bounds_ok = false;
            }
            Tensor z = soft_mask_target(s, s);
            for (int i = 0; i < z.numel(); ++i)
                if (z.data()[i] != 0.0f) zero_ok = false;
        }
        record("soft-mask formula vs scalar oracle", worst < 1e-6 && bounds_ok && zero_ok,
               "max dev " + fmt(worst));
    }

    {  // shape plumbing
        Rng rng(808);
        Tensor t = Tensor::rand_uniform({2, 3, 4}, -1.0f, 1.0f, rng);
        Tensor back = reshape(reshape(t, {24}), {2, 3, 4});
        bool same = true;
        for (int i = 0; i < t.numel(); ++i) same = same && back.data()[i] == t.data()[i];
        Tensor sm = softmax(Tensor::rand_uniform({4, 6}, -5.0f, 5.0f, rng), 1);
        double worst_row = 0;
        bool positive = true;
        for (int i = 0; i < 4; ++i) {
            double sum = 0;
            for (int j = 0; j < 6; ++j) {
                sum += sm.at({i, j});
                positive = positive && sm.at({i, j}) > 0.0f;
            }
            worst_row = std::max(worst_row, std::abs(sum - 1.0));
        }
        record("reshape round-trip and softmax normalization", same && positive && worst_row < 1e-6,
               "row dev " + fmt(worst_row));
    }

    return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.passed) return false;
    return true;
}

}  // namespace cnsnet
