#pragma once

#include <cstdint>
#include <string>

#include "cnsnet/tensor.hpp"

namespace cnsnet {

enum class Region { Shadow, NonShadow, All };

// Region membership against a binary shadow mask (1 = shadow). The mask
// may be undefined when mode == All.
struct RegionSelector {
    Region mode = Region::All;
    Tensor mask;  // [H,W], values in {0,1}

    bool selects(int y, int x) const;
};

constexpr double kPsnrCap = 99.0;  // reported for exactly zero MSE

struct MetricReport {
    // Index order: Shadow, NonShadow, All.
    double rmse[3] = {0, 0, 0};    // LAB-space MAE, community "RMSE" convention
    double psnr[3] = {0, 0, 0};    // dB, pooled MSE over the split
    double ssim[3] = {0, 0, 0};    // mean local SSIM over selected window centers
    std::int64_t pixels[3] = {0, 0, 0};
    std::int64_t ssim_windows[3] = {0, 0, 0};
    std::int64_t images = 0;

    std::string table() const;
    std::string to_json() const;
};

// Running sums pooled over all pixels of a test split (never per image).
struct MetricAccumulator {
    double mae_sum[3] = {0, 0, 0};
    std::int64_t mae_count[3] = {0, 0, 0};
    double sq_sum[3] = {0, 0, 0};       // RGB squared error
    std::int64_t sq_count[3] = {0, 0, 0};
    double ssim_sum[3] = {0, 0, 0};
    std::int64_t ssim_count[3] = {0, 0, 0};
    std::int64_t images = 0;

    // pred/gt: [3,H,W] in [0,1]; mask: [H,W] binary.
    void add_image(const Tensor& pred, const Tensor& gt, const Tensor& mask);
    void merge(const MetricAccumulator& other);
    MetricReport report() const;
};

// LAB mean-absolute-error sums for one image and selector (Σ over selected
// pixels of the channel-mean |Δlab|, plus the selected pixel count).
void accumulate_mae(const Tensor& pred, const Tensor& gt, const RegionSelector& sel,
                    double& sum, std::int64_t& count);

// Per-image PSNR over selected RGB pixels; identical images return the
// 99 dB sentinel; empty selection returns NaN.
double psnr(const Tensor& pred, const Tensor& gt, const RegionSelector& sel);

// Per-image mean local SSIM (11x11 Gaussian, sigma 1.5, k1 .01, k2 .03)
// over windows whose center is selected; empty selection returns NaN.
double ssim(const Tensor& pred, const Tensor& gt, const RegionSelector& sel);

}  // namespace cnsnet
