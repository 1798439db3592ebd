#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnsnet/nn.hpp"
#include "cnsnet/tensor.hpp"

namespace cnsnet {

enum class SoanVariant { Regional, BatchNorm, InstanceNorm };

struct SoanConfig {
    SoanVariant variant = SoanVariant::Regional;
    double epsilon = 1e-5;
};

enum class MaskRegion { Shadow, NonShadow };

// Per-sample, per-channel statistics of a mask-selected pixel set.
// stddev = sqrt(variance + epsilon). counts[i] == 0 flags an empty
// region for sample i (mean/stddev rows are then meaningless).
template <typename T>
struct RegionStatsT {
    TensorT<T> mean;    // [N,C]
    TensorT<T> stddev;  // [N,C]
    std::vector<std::int64_t> counts;
    T epsilon = T(1e-5);

    bool all_valid() const {
        for (auto c : counts)
            if (c == 0) return false;
        return true;
    }
};

// features: [N,C,H,W]; mask: [H,W] shared across the batch or [N,1,H,W]
// per sample, values in {0,1} with 1 = shadow. Differentiable w.r.t.
// features (statistics stay on the tape).
template <typename T>
RegionStatsT<T> region_stats(const TensorT<T>& features, const TensorT<T>& mask, MaskRegion region, T epsilon);

// Residuals of the exact total/region decomposition identities
// (count split, count-weighted mean, variance identity), evaluated with
// epsilon = 0 in double precision. Verification utility only.
struct StatsResiduals {
    double mean_residual = 0.0;
    double var_residual = 0.0;
};
StatsResiduals stats_decomposition_check(const Tensor64& features, const Tensor64& mask);

// Shadow-oriented adaptive normalization block: split channels in two,
// regionally standardize the first half (shadow pixels re-affined with
// non-shadow statistics), pass the second half through, fuse with two
// convs and add a 1x1 residual path.
template <typename T>
class SoanBlockT {
public:
    SoanBlockT() = default;
    SoanBlockT(int channels, const SoanConfig& cfg, Rng& rng);

    // f: [N,C,H,W] (C even); mask: [H,W] or [N,1,H,W] binary at feature resolution.
    TensorT<T> forward(const TensorT<T>& f, const TensorT<T>& mask) const;
    void collect(const std::string& prefix, ParamMap<T>& out);

    // Samples skipped because shadow or non-shadow was empty at this scale.
    std::int64_t empty_region_events() const { return empty_region_events_; }

    // Normalization stage alone (pre-conv), exposed for the stat-transfer checks.
    TensorT<T> normalize_half(const TensorT<T>& f_half, const TensorT<T>& mask) const;

private:
    SoanConfig cfg_;
    int channels_ = 0;
    Conv2dT<T> conv1_, conv2_, res_;
    TensorT<T> bn_gamma_, bn_beta_;  // BatchNorm variant only
    mutable std::int64_t empty_region_events_ = 0;
};

using SoanBlock = SoanBlockT<float>;

}  // namespace cnsnet
