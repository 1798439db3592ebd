#include "cnsnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "cnsnet/colorspace.hpp"

namespace cnsnet {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (k1 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

const double* gauss_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> v(kWin);
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            v[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += v[static_cast<size_t>(i)];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return k.data();
}

// Separable valid-mode Gaussian filter; output is (h-10) x (w-10).
void gauss_filter_valid(const std::vector<double>& img, int h, int w, std::vector<double>& out) {
    const double* k = gauss_kernel();
    const int ow = w - kWin + 1;
    const int oh = h - kWin + 1;
    std::vector<double> tmp(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        const double* row = img.data() + static_cast<std::int64_t>(y) * w;
        double* dst = tmp.data() + static_cast<std::int64_t>(y) * ow;
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int j = 0; j < kWin; ++j) acc += k[j] * row[x + j];
            dst[x] = acc;
        }
    }
    out.assign(static_cast<size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y) {
        double* dst = out.data() + static_cast<std::int64_t>(y) * ow;
        for (int i = 0; i < kWin; ++i) {
            const double kv = k[i];
            const double* src = tmp.data() + static_cast<std::int64_t>(y + i) * ow;
            for (int x = 0; x < ow; ++x) dst[x] += kv * src[x];
        }
    }
}

void check_pair(const char* op, const Tensor& pred, const Tensor& gt) {
    if (pred.ndim() != 3 || pred.dim(0) != 3) {
        throw std::invalid_argument(std::string(op) + ": expected [3,H,W], got " + shape_str(pred.shape()));
    }
    if (pred.shape() != gt.shape()) {
        throw std::invalid_argument(std::string(op) + ": pred " + shape_str(pred.shape()) +
                                    " vs gt " + shape_str(gt.shape()));
    }
}

double finish_psnr(double sq_sum, std::int64_t count) {
    if (count == 0) return std::numeric_limits<double>::quiet_NaN();
    const double mse = sq_sum / static_cast<double>(count);
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

bool RegionSelector::selects(int y, int x) const {
    if (mode == Region::All) return true;
    const bool shadow = mask.at({y, x}) >= 0.5f;
    return mode == Region::Shadow ? shadow : !shadow;
}

void accumulate_mae(const Tensor& pred, const Tensor& gt, const RegionSelector& sel,
                    double& sum, std::int64_t& count) {
    check_pair("accumulate_mae", pred, gt);
    const Tensor pl = srgb_to_lab(pred);
    const Tensor gl = srgb_to_lab(gt);
    const int h = pred.dim(1), w = pred.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const float* p = pl.data();
    const float* g = gl.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!sel.selects(y, x)) continue;
            const std::int64_t i = static_cast<std::int64_t>(y) * w + x;
            const double d = (std::abs(static_cast<double>(p[i]) - g[i]) +
                              std::abs(static_cast<double>(p[plane + i]) - g[plane + i]) +
                              std::abs(static_cast<double>(p[2 * plane + i]) - g[2 * plane + i])) /
                             3.0;
            sum += d;
            ++count;
        }
}

double psnr(const Tensor& pred, const Tensor& gt, const RegionSelector& sel) {
    check_pair("psnr", pred, gt);
    const int h = pred.dim(1), w = pred.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const float* p = pred.data();
    const float* g = gt.data();
    double sq = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!sel.selects(y, x)) continue;
            const std::int64_t i = static_cast<std::int64_t>(y) * w + x;
            for (int c = 0; c < 3; ++c) {
                const double d = static_cast<double>(p[c * plane + i]) - g[c * plane + i];
                sq += d * d;
            }
            count += 3;
        }
    return finish_psnr(sq, count);
}

namespace {

// Shared by the per-image op and the dataset accumulator: SSIM values of
// every valid window plus the center coordinates.
void ssim_map(const Tensor& pred, const Tensor& gt, std::vector<double>& out, int& oh, int& ow) {
    const int h = pred.dim(1), w = pred.dim(2);
    if (h < kWin || w < kWin) {
        throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                    " smaller than the 11x11 window");
    }
    const Tensor pg = rgb_to_gray(pred);
    const Tensor gg = rgb_to_gray(gt);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    std::vector<double> p(static_cast<size_t>(plane)), g(static_cast<size_t>(plane));
    std::vector<double> pp(static_cast<size_t>(plane)), ggv(static_cast<size_t>(plane)), pgv(static_cast<size_t>(plane));
    for (std::int64_t i = 0; i < plane; ++i) {
        p[static_cast<size_t>(i)] = pg.data()[i];
        g[static_cast<size_t>(i)] = gg.data()[i];
        pp[static_cast<size_t>(i)] = p[static_cast<size_t>(i)] * p[static_cast<size_t>(i)];
        ggv[static_cast<size_t>(i)] = g[static_cast<size_t>(i)] * g[static_cast<size_t>(i)];
        pgv[static_cast<size_t>(i)] = p[static_cast<size_t>(i)] * g[static_cast<size_t>(i)];
    }
    std::vector<double> mu_p, mu_g, e_pp, e_gg, e_pg;
    gauss_filter_valid(p, h, w, mu_p);
    gauss_filter_valid(g, h, w, mu_g);
    gauss_filter_valid(pp, h, w, e_pp);
    gauss_filter_valid(ggv, h, w, e_gg);
    gauss_filter_valid(pgv, h, w, e_pg);
    oh = h - kWin + 1;
    ow = w - kWin + 1;
    out.resize(static_cast<size_t>(oh) * ow);
    for (size_t i = 0; i < out.size(); ++i) {
        const double mp = mu_p[i], mg = mu_g[i];
        const double vp = e_pp[i] - mp * mp;
        const double vg = e_gg[i] - mg * mg;
        const double cov = e_pg[i] - mp * mg;
        out[i] = ((2.0 * mp * mg + kC1) * (2.0 * cov + kC2)) /
                 ((mp * mp + mg * mg + kC1) * (vp + vg + kC2));
    }
}

}  // namespace

double ssim(const Tensor& pred, const Tensor& gt, const RegionSelector& sel) {
    check_pair("ssim", pred, gt);
    std::vector<double> map;
    int oh = 0, ow = 0;
    ssim_map(pred, gt, map, oh, ow);
    const int off = (kWin - 1) / 2;
    double sum = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            if (!sel.selects(y + off, x + off)) continue;
            sum += map[static_cast<size_t>(y) * ow + x];
            ++count;
        }
    if (count == 0) return std::numeric_limits<double>::quiet_NaN();
    return sum / static_cast<double>(count);
}

void MetricAccumulator::add_image(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
    check_pair("MetricAccumulator::add_image", pred, gt);
    const int h = pred.dim(1), w = pred.dim(2);
    if (mask.ndim() != 2 || mask.dim(0) != h || mask.dim(1) != w) {
        throw std::invalid_argument("add_image: mask " + shape_str(mask.shape()) + " vs image " +
                                    shape_str(pred.shape()));
    }
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const Tensor pl = srgb_to_lab(pred);
    const Tensor gl = srgb_to_lab(gt);
    const float* p = pred.data();
    const float* g = gt.data();
    const float* plab = pl.data();
    const float* glab = gl.data();
    const float* m = mask.data();

    for (std::int64_t i = 0; i < plane; ++i) {
        const int r = m[i] >= 0.5f ? 0 : 1;
        const double mae = (std::abs(static_cast<double>(plab[i]) - glab[i]) +
                            std::abs(static_cast<double>(plab[plane + i]) - glab[plane + i]) +
                            std::abs(static_cast<double>(plab[2 * plane + i]) - glab[2 * plane + i])) /
                           3.0;
        double sq = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = static_cast<double>(p[c * plane + i]) - g[c * plane + i];
            sq += d * d;
        }
        for (int reg : {r, 2}) {
            mae_sum[reg] += mae;
            mae_count[reg] += 1;
            sq_sum[reg] += sq;
            sq_count[reg] += 3;
        }
    }

    std::vector<double> map;
    int oh = 0, ow = 0;
    ssim_map(pred, gt, map, oh, ow);
    const int off = (kWin - 1) / 2;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const int r = m[static_cast<std::int64_t>(y + off) * w + (x + off)] >= 0.5f ? 0 : 1;
            const double v = map[static_cast<size_t>(y) * ow + x];
            for (int reg : {r, 2}) {
                ssim_sum[reg] += v;
                ssim_count[reg] += 1;
            }
        }
    ++images;
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
    for (int r = 0; r < 3; ++r) {
        mae_sum[r] += other.mae_sum[r];
        mae_count[r] += other.mae_count[r];
        sq_sum[r] += other.sq_sum[r];
        sq_count[r] += other.sq_count[r];
        ssim_sum[r] += other.ssim_sum[r];
        ssim_count[r] += other.ssim_count[r];
    }
    images += other.images;
}

MetricReport MetricAccumulator::report() const {
    MetricReport rep;
    for (int r = 0; r < 3; ++r) {
        rep.rmse[r] = mae_count[r] ? mae_sum[r] / static_cast<double>(mae_count[r])
                                   : std::numeric_limits<double>::quiet_NaN();
        rep.psnr[r] = finish_psnr(sq_sum[r], sq_count[r]);
        rep.ssim[r] = ssim_count[r] ? ssim_sum[r] / static_cast<double>(ssim_count[r])
                                    : std::numeric_limits<double>::quiet_NaN();
        rep.pixels[r] = mae_count[r];
        rep.ssim_windows[r] = ssim_count[r];
    }
    rep.images = images;
    return rep;
}

std::string MetricReport::table() const {
    char buf[512];
    std::string out;
    out += "metric        S        NS       ALL\n";
    std::snprintf(buf, sizeof(buf), "RMSE    %8.2f  %8.2f  %8.2f\n", rmse[0], rmse[1], rmse[2]);
    out += buf;
    std::snprintf(buf, sizeof(buf), "PSNR    %8.2f  %8.2f  %8.2f\n", psnr[0], psnr[1], psnr[2]);
    out += buf;
    std::snprintf(buf, sizeof(buf), "SSIM    %8.4f  %8.4f  %8.4f\n", ssim[0], ssim[1], ssim[2]);
    out += buf;
    std::snprintf(buf, sizeof(buf), "pixels  %8lld  %8lld  %8lld  (%lld images)\n",
                  static_cast<long long>(pixels[0]), static_cast<long long>(pixels[1]),
                  static_cast<long long>(pixels[2]), static_cast<long long>(images));
    out += buf;
    return out;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    const char* suffix[3] = {"s", "ns", "all"};
    for (int r = 0; r < 3; ++r) {
        j[std::string("rmse_") + suffix[r]] = rmse[r];
        j[std::string("psnr_") + suffix[r]] = psnr[r];
        j[std::string("ssim_") + suffix[r]] = ssim[r];
        j[std::string("pixels_") + suffix[r]] = pixels[r];
        j[std::string("ssim_windows_") + suffix[r]] = ssim_windows[r];
    }
    j["images"] = images;
    return j.dump(2);
}

}  // namespace cnsnet
