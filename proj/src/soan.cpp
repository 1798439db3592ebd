#include "cnsnet/soan.hpp"

#include <cmath>
#include <stdexcept>

#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

namespace {

// Normalizes the mask argument to [N,1,H,W] values matching `region`.
template <typename T>
TensorT<T> region_indicator(const TensorT<T>& mask, MaskRegion region, int n, int h, int w) {
    TensorT<T> m;
    if (mask.ndim() == 2) {
        if (mask.dim(0) != h || mask.dim(1) != w) {
            throw std::invalid_argument("region mask " + shape_str(mask.shape()) + " vs features " +
                                        std::to_string(h) + "x" + std::to_string(w));
        }
        m = expand(reshape(mask, {1, 1, h, w}), {n, 1, h, w});
    } else if (mask.ndim() == 4 && mask.dim(0) == n && mask.dim(1) == 1 && mask.dim(2) == h &&
               mask.dim(3) == w) {
        m = mask;
    } else {
        throw std::invalid_argument("region mask must be [H,W] or [N,1,H,W], got " + shape_str(mask.shape()));
    }
    if (region == MaskRegion::NonShadow) m = sub_from_scalar(T(1), m);
    return m;
}

template <typename T>
std::vector<std::int64_t> per_sample_counts(const TensorT<T>& indicator) {
    const int n = indicator.dim(0);
    const std::int64_t plane = static_cast<std::int64_t>(indicator.dim(2)) * indicator.dim(3);
    std::vector<std::int64_t> counts(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const T* d = indicator.data() + static_cast<std::int64_t>(i) * plane;
        std::int64_t c = 0;
        for (std::int64_t k = 0; k < plane; ++k)
            if (d[k] >= T(0.5)) ++c;
        counts[static_cast<size_t>(i)] = c;
    }
    return counts;
}

// Constant [N,1,1,1] tensor holding 1/max(count,1).
template <typename T>
TensorT<T> inv_count_tensor(const std::vector<std::int64_t>& counts) {
    std::vector<T> v(counts.size());
    for (size_t i = 0; i < counts.size(); ++i)
        v[i] = T(1) / static_cast<T>(std::max<std::int64_t>(counts[i], 1));
    return TensorT<T>::from_data({static_cast<int>(counts.size()), 1, 1, 1}, std::move(v));
}

}  // namespace

template <typename T>
RegionStatsT<T> region_stats(const TensorT<T>& features, const TensorT<T>& mask, MaskRegion region, T epsilon) {
    if (features.ndim() != 4) {
        throw std::invalid_argument("region_stats: features must be [N,C,H,W], got " +
                                    shape_str(features.shape()));
    }
    const int n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
    TensorT<T> ind = region_indicator<T>(mask, region, n, h, w);
    RegionStatsT<T> stats;
    stats.epsilon = epsilon;
    stats.counts = per_sample_counts(ind);

    TensorT<T> ind_c = expand(ind, features.shape());
    TensorT<T> inv = expand(inv_count_tensor<T>(stats.counts), Shape{n, c, 1, 1});
    TensorT<T> masked = mul(features, ind_c);
    TensorT<T> mu = mul(reduce_sum(masked, {2, 3}, true), inv);                  // [N,C,1,1]
    TensorT<T> centered = mul(sub(features, expand(mu, features.shape())), ind_c);
    TensorT<T> var = mul(reduce_sum(square(centered), {2, 3}, true), inv);
    TensorT<T> sd = sqrt(add_scalar(var, epsilon));

    stats.mean = reshape(mu, {n, c});
    stats.stddev = reshape(sd, {n, c});
    return stats;
}

StatsResiduals stats_decomposition_check(const Tensor64& features, const Tensor64& mask) {
    if (features.ndim() != 4) throw std::invalid_argument("stats_decomposition_check: features must be [N,C,H,W]");
    const int n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
    if (mask.ndim() != 2 || mask.dim(0) != h || mask.dim(1) != w) {
        throw std::invalid_argument("stats_decomposition_check: mask must be [H,W] at feature resolution");
    }
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    StatsResiduals res;
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const double* d = features.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
            double sum_s = 0, sum_n = 0, sq_s = 0, sq_n = 0;
            std::int64_t n_s = 0, n_n = 0;
            for (std::int64_t i = 0; i < plane; ++i) {
                if (mask.data()[i] >= 0.5) {
                    sum_s += d[i];
                    sq_s += d[i] * d[i];
                    ++n_s;
                } else {
                    sum_n += d[i];
                    sq_n += d[i] * d[i];
                    ++n_n;
                }
            }
            if (n_s == 0 || n_n == 0) {
                throw std::invalid_argument("stats_decomposition_check: degenerate region");
            }
            const double n_t = static_cast<double>(plane);
            const double mu_s = sum_s / n_s, mu_n = sum_n / n_n;
            const double mu_t = (sum_s + sum_n) / n_t;
            const double var_s = sq_s / n_s - mu_s * mu_s;
            const double var_n = sq_n / n_n - mu_n * mu_n;
            const double var_t = (sq_s + sq_n) / n_t - mu_t * mu_t;

            const double mu_composed = (n_s / n_t) * mu_s + (n_n / n_t) * mu_n;
            const double var_composed =
                (n_s / n_t) * (var_s + mu_s * mu_s) + (n_n / n_t) * (var_n + mu_n * mu_n) - mu_t * mu_t;
            res.mean_residual = std::max(res.mean_residual, std::abs(mu_t - mu_composed));
            res.var_residual = std::max(res.var_residual, std::abs(var_t - var_composed));
        }
    }
    return res;
}

template <typename T>
SoanBlockT<T>::SoanBlockT(int channels, const SoanConfig& cfg, Rng& rng) : cfg_(cfg), channels_(channels) {
    if (channels % 2 != 0) {
        throw std::invalid_argument("SoanBlock: channel count must be even, got " + std::to_string(channels));
    }
    const int mid = channels / 2;
    conv1_ = Conv2dT<T>(channels, mid, 3, 1, 1, rng);
    conv2_ = Conv2dT<T>(mid, channels, 3, 1, 1, rng);
    res_ = Conv2dT<T>(channels, channels, 1, 1, 0, rng);
    if (cfg.variant == SoanVariant::BatchNorm) {
        bn_gamma_ = TensorT<T>::full({mid}, T(1));
        bn_gamma_.set_requires_grad(true);
        bn_beta_ = TensorT<T>::zeros({mid});
        bn_beta_.set_requires_grad(true);
    }
}

template <typename T>
TensorT<T> SoanBlockT<T>::normalize_half(const TensorT<T>& f1, const TensorT<T>& mask) const {
    const int n = f1.dim(0), h = f1.dim(2), w = f1.dim(3);
    const T eps = static_cast<T>(cfg_.epsilon);

    if (cfg_.variant == SoanVariant::BatchNorm) {
        TensorT<T> mu = reduce_mean(f1, {0, 2, 3}, true);
        TensorT<T> centered = sub(f1, expand(mu, f1.shape()));
        TensorT<T> var = reduce_mean(square(centered), {0, 2, 3}, true);
        TensorT<T> norm = divide(centered, expand(sqrt(add_scalar(var, eps)), f1.shape()));
        return channel_affine(norm, bn_gamma_, bn_beta_);
    }
    if (cfg_.variant == SoanVariant::InstanceNorm) {
        TensorT<T> mu = reduce_mean(f1, {2, 3}, true);
        TensorT<T> centered = sub(f1, expand(mu, f1.shape()));
        TensorT<T> var = reduce_mean(square(centered), {2, 3}, true);
        return divide(centered, expand(sqrt(add_scalar(var, eps)), f1.shape()));
    }

    // Regional: shadow pixels re-affined with non-shadow statistics,
    // non-shadow pixels standardized by their own statistics.
    TensorT<T> shadow_ind = region_indicator<T>(mask, MaskRegion::Shadow, n, h, w);
    RegionStatsT<T> s = region_stats(f1, mask, MaskRegion::Shadow, eps);
    RegionStatsT<T> ns = region_stats(f1, mask, MaskRegion::NonShadow, eps);

    std::vector<T> valid(static_cast<size_t>(n));
    std::int64_t invalid = 0;
    for (int i = 0; i < n; ++i) {
        const bool ok = s.counts[static_cast<size_t>(i)] > 0 && ns.counts[static_cast<size_t>(i)] > 0;
        valid[static_cast<size_t>(i)] = ok ? T(1) : T(0);
        if (!ok) ++invalid;
    }
    empty_region_events_ += invalid;
    if (invalid == n) return f1;

    const Shape full = f1.shape();
    const int c1 = f1.dim(1);
    auto bcast = [&](const TensorT<T>& v) { return expand(reshape(v, {n, c1, 1, 1}), full); };

    TensorT<T> ind_c = expand(shadow_ind, full);
    TensorT<T> shadow_norm =
        add(mul(divide(sub(f1, bcast(s.mean)), bcast(s.stddev)), bcast(ns.stddev)), bcast(ns.mean));
    TensorT<T> ns_norm = divide(sub(f1, bcast(ns.mean)), bcast(ns.stddev));
    TensorT<T> combined = add(mul(shadow_norm, ind_c), mul(ns_norm, sub_from_scalar(T(1), ind_c)));
    if (invalid == 0) return combined;

    TensorT<T> v = expand(TensorT<T>::from_data({n, 1, 1, 1}, std::move(valid)), full);
    return add(mul(combined, v), mul(f1, sub_from_scalar(T(1), v)));
}

template <typename T>
TensorT<T> SoanBlockT<T>::forward(const TensorT<T>& f, const TensorT<T>& mask) const {
    if (f.ndim() != 4 || f.dim(1) != channels_) {
        throw std::invalid_argument("SoanBlock: expected [N," + std::to_string(channels_) + ",H,W], got " +
                                    shape_str(f.shape()));
    }
    const int half = channels_ / 2;
    TensorT<T> f1 = slice(f, 1, 0, half);
    TensorT<T> f2 = slice(f, 1, half, half);
    TensorT<T> merged = concat<T>({normalize_half(f1, mask), f2}, 1);
    TensorT<T> fused = conv2_.forward(lrelu(conv1_.forward(merged)));
    return add(fused, res_.forward(f));
}

template <typename T>
void SoanBlockT<T>::collect(const std::string& prefix, ParamMap<T>& out) {
    conv1_.collect(prefix + ".conv1", out);
    conv2_.collect(prefix + ".conv2", out);
    res_.collect(prefix + ".res", out);
    if (bn_gamma_.defined()) {
        out.add(prefix + ".bn_gamma", bn_gamma_);
        out.add(prefix + ".bn_beta", bn_beta_);
    }
}

template struct RegionStatsT<float>;
template struct RegionStatsT<double>;
template RegionStatsT<float> region_stats(const TensorT<float>&, const TensorT<float>&, MaskRegion, float);
template RegionStatsT<double> region_stats(const TensorT<double>&, const TensorT<double>&, MaskRegion, double);
template class SoanBlockT<float>;
template class SoanBlockT<double>;

}  // namespace cnsnet
