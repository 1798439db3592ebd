#include <doctest.h>

#include <cmath>

#include "cnsnet/colorspace.hpp"
#include "cnsnet/metrics.hpp"
#include "cnsnet/rng.hpp"
#include "cnsnet/tensor.hpp"

using namespace cnsnet;

namespace {

// Independently coded scalar reference for the sRGB -> LAB pipeline
// (long-double arithmetic, different code shape from the library path).
void lab_reference(double r, double g, double b, double out[3]) {
    long double rgb[3] = {static_cast<long double>(r), static_cast<long double>(g),
                          static_cast<long double>(b)};
    for (auto& v : rgb) {
        v = std::min<long double>(1.0L, std::max<long double>(0.0L, v));
        v = v <= 0.04045L ? v / 12.92L : powl((v + 0.055L) / 1.055L, 2.4L);
    }
    const long double mat[3][3] = {{0.4124564L, 0.3575761L, 0.1804375L},
                                   {0.2126729L, 0.7151522L, 0.0721750L},
                                   {0.0193339L, 0.1191920L, 0.9503041L}};
    const long double white[3] = {0.95047L, 1.0L, 1.08883L};
    long double xyz[3] = {0, 0, 0};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) xyz[i] += mat[i][j] * rgb[j];
    long double f[3];
    for (int i = 0; i < 3; ++i) {
        const long double t = xyz[i] / white[i];
        f[i] = t > 216.0L / 24389.0L ? powl(t, 1.0L / 3.0L) : (24389.0L / 27.0L * t + 16.0L) / 116.0L;
    }
    out[0] = static_cast<double>(116.0L * f[1] - 16.0L);
    out[1] = static_cast<double>(500.0L * (f[0] - f[1]));
    out[2] = static_cast<double>(200.0L * (f[1] - f[2]));
}

Tensor solid(float r, float g, float b, int h, int w) {
    Tensor t = Tensor::uninit({3, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (std::int64_t i = 0; i < plane; ++i) {
        t.data()[i] = r;
        t.data()[plane + i] = g;
        t.data()[2 * plane + i] = b;
    }
    return t;
}

// Direct windowed SSIM with explicit per-window sums, no separable pass.
double ssim_windowed_oracle(const Tensor& pred, const Tensor& gt, const RegionSelector& sel) {
    const Tensor pg = rgb_to_gray(pred);
    const Tensor gg = rgb_to_gray(gt);
    const int h = pg.dim(0), w = pg.dim(1);
    double k[11];
    double ksum = 0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5.0;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        ksum += k[i];
    }
    for (auto& v : k) v /= ksum;
    double total = 0;
    std::int64_t count = 0;
    for (int cy = 5; cy < h - 5; ++cy)
        for (int cx = 5; cx < w - 5; ++cx) {
            if (!sel.selects(cy, cx)) continue;
            double mp = 0, mg = 0, epp = 0, egg = 0, epg = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double wgt = k[i] * k[j];
                    const double p = pg.at({cy - 5 + i, cx - 5 + j});
                    const double g = gg.at({cy - 5 + i, cx - 5 + j});
                    mp += wgt * p;
                    mg += wgt * g;
                    epp += wgt * p * p;
                    egg += wgt * g * g;
                    epg += wgt * p * g;
                }
            const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
            const double vp = epp - mp * mp, vg = egg - mg * mg, cov = epg - mp * mg;
            total += ((2 * mp * mg + c1) * (2 * cov + c2)) / ((mp * mp + mg * mg + c1) * (vp + vg + c2));
            ++count;
        }
    return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("LAB endpoints: black and white") {
    Tensor black = solid(0, 0, 0, 2, 2);
    Tensor lab = srgb_to_lab(black);
    CHECK(lab.at({0, 0, 0}) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(lab.at({1, 0, 0}) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(lab.at({2, 0, 0}) == doctest::Approx(0.0).epsilon(1e-6));

    Tensor white = solid(1, 1, 1, 2, 2);
    Tensor wl = srgb_to_lab(white);
    CHECK(wl.at({0, 0, 0}) == doctest::Approx(100.0).epsilon(1e-4));
    CHECK(std::abs(wl.at({1, 0, 0})) < 1e-3);
    CHECK(std::abs(wl.at({2, 0, 0})) < 1e-3);
}

TEST_CASE("LAB matches the independent scalar reference") {
    double ref[3];
    lab_reference(0.5, 0.5, 0.5, ref);
    Tensor mid = solid(0.5f, 0.5f, 0.5f, 1, 1);
    Tensor lab = srgb_to_lab(mid);
    for (int c = 0; c < 3; ++c) CHECK(lab.at({c, 0, 0}) == doctest::Approx(ref[c]).epsilon(1e-4));

    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
        lab_reference(r, g, b, ref);
        Tensor px = solid(static_cast<float>(r), static_cast<float>(g), static_cast<float>(b), 1, 1);
        Tensor out = srgb_to_lab(px);
        for (int c = 0; c < 3; ++c) {
            CHECK(out.at({c, 0, 0}) == doctest::Approx(ref[c]).epsilon(1e-4));
        }
    }
    CHECK_THROWS_AS(srgb_to_lab(Tensor::zeros({1, 4, 4})), std::invalid_argument);
}

TEST_CASE("accumulate_mae convention and trivial cases") {
    RegionSelector all{Region::All, Tensor()};
    Tensor a = solid(0.5f, 0.5f, 0.5f, 2, 2);
    double sum = 0;
    std::int64_t count = 0;
    accumulate_mae(a, a, all, sum, count);
    CHECK(sum == doctest::Approx(0.0));
    CHECK(count == 4);

    // A pure-lightness delta: channel-mean convention adds ~ dL/3 per pixel.
    Tensor g1 = solid(0.5f, 0.5f, 0.5f, 1, 1);
    Tensor g2 = solid(0.53f, 0.53f, 0.53f, 1, 1);
    double ref1[3], ref2[3];
    lab_reference(0.5, 0.5, 0.5, ref1);
    lab_reference(0.53, 0.53, 0.53, ref2);
    const double expected =
        (std::abs(ref1[0] - ref2[0]) + std::abs(ref1[1] - ref2[1]) + std::abs(ref1[2] - ref2[2])) / 3.0;
    sum = 0;
    count = 0;
    accumulate_mae(g1, g2, all, sum, count);
    CHECK(count == 1);
    CHECK(sum == doctest::Approx(expected).epsilon(1e-4));
    CHECK(sum == doctest::Approx(std::abs(ref1[0] - ref2[0]) / 3.0).epsilon(2e-2));
}

TEST_CASE("MAE is symmetric and zero only at identity") {
    Rng rng(31);
    RegionSelector all{Region::All, Tensor()};
    Tensor a = Tensor::rand_uniform({3, 8, 8}, 0.0f, 1.0f, rng);
    Tensor b = Tensor::rand_uniform({3, 8, 8}, 0.0f, 1.0f, rng);
    double sab = 0, sba = 0;
    std::int64_t c1 = 0, c2 = 0;
    accumulate_mae(a, b, all, sab, c1);
    accumulate_mae(b, a, all, sba, c2);
    CHECK(sab == doctest::Approx(sba).epsilon(1e-12));
    CHECK(sab > 0.0);
}

TEST_CASE("PSNR trivial values and oracle") {
    RegionSelector all{Region::All, Tensor()};
    Tensor a = solid(0.25f, 0.5f, 0.75f, 4, 4);
    CHECK(psnr(a, a, all) == doctest::Approx(99.0));

    Tensor b = Tensor::uninit(a.shape());
    for (int i = 0; i < a.numel(); ++i) b.data()[i] = a.data()[i] + 0.1f;
    CHECK(psnr(a, b, all) == doctest::Approx(20.0).epsilon(1e-4));

    Rng rng(17);
    Tensor p = Tensor::rand_uniform({3, 16, 16}, 0.0f, 1.0f, rng);
    Tensor g = Tensor::rand_uniform({3, 16, 16}, 0.0f, 1.0f, rng);
    double sq = 0;
    std::int64_t n = 0;
    for (int i = 0; i < p.numel(); ++i) {
        const double d = static_cast<double>(p.data()[i]) - g.data()[i];
        sq += d * d;
        ++n;
    }
    const double want = 10.0 * std::log10(1.0 / (sq / n));
    CHECK(psnr(p, g, all) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("PSNR decreases as noise grows") {
    Rng rng(23);
    Tensor base = Tensor::rand_uniform({3, 12, 12}, 0.2f, 0.8f, rng);
    RegionSelector all{Region::All, Tensor()};
    double prev = 1e9;
    for (float amp : {0.02f, 0.05f, 0.1f, 0.2f}) {
        Tensor noisy = Tensor::uninit(base.shape());
        Rng nr(99);
        for (int i = 0; i < base.numel(); ++i)
            noisy.data()[i] = base.data()[i] + amp * static_cast<float>(nr.uniform(0.5, 1.0));
        const double v = psnr(noisy, base, all);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("SSIM trivial, oracle, and region handling") {
    Rng rng(41);
    RegionSelector all{Region::All, Tensor()};
    Tensor a = Tensor::rand_uniform({3, 16, 16}, 0.0f, 1.0f, rng);
    CHECK(ssim(a, a, all) == doctest::Approx(1.0).epsilon(1e-9));

    // binary image against its inverse
    Tensor bin = Tensor::uninit({3, 16, 16});
    for (int i = 0; i < bin.numel(); ++i) bin.data()[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    Tensor inv = Tensor::uninit(bin.shape());
    for (int i = 0; i < bin.numel(); ++i) inv.data()[i] = 1.0f - bin.data()[i];
    CHECK(ssim(inv, bin, all) == doctest::Approx(ssim_windowed_oracle(inv, bin, all)).epsilon(1e-9));

    Tensor p = Tensor::rand_uniform({3, 20, 14}, 0.0f, 1.0f, rng);
    Tensor g = Tensor::rand_uniform({3, 20, 14}, 0.0f, 1.0f, rng);
    Tensor mask = Tensor::uninit({20, 14});
    for (int i = 0; i < mask.numel(); ++i) mask.data()[i] = rng.uniform() < 0.3 ? 1.0f : 0.0f;
    for (Region r : {Region::Shadow, Region::NonShadow, Region::All}) {
        RegionSelector sel{r, mask};
        CHECK(ssim(p, g, sel) == doctest::Approx(ssim_windowed_oracle(p, g, sel)).epsilon(1e-9));
    }

    CHECK_THROWS_AS(ssim(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8}), all), std::invalid_argument);
}

TEST_CASE("accumulator pooling identity and report") {
    Rng rng(55);
    MetricAccumulator acc;
    for (int img = 0; img < 3; ++img) {
        Tensor p = Tensor::rand_uniform({3, 16, 16}, 0.0f, 1.0f, rng);
        Tensor g = Tensor::rand_uniform({3, 16, 16}, 0.0f, 1.0f, rng);
        Tensor m = Tensor::uninit({16, 16});
        for (int i = 0; i < m.numel(); ++i) m.data()[i] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
        acc.add_image(p, g, m);
    }
    MetricReport rep = acc.report();
    CHECK(rep.pixels[2] == rep.pixels[0] + rep.pixels[1]);
    const double lhs = rep.rmse[2] * static_cast<double>(rep.pixels[2]);
    const double rhs = rep.rmse[0] * static_cast<double>(rep.pixels[0]) +
                       rep.rmse[1] * static_cast<double>(rep.pixels[1]);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
    CHECK(rep.images == 3);
    CHECK(rep.to_json().find("rmse_all") != std::string::npos);
    CHECK(rep.table().find("RMSE") != std::string::npos);
}
