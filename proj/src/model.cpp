#include "cnsnet/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

std::vector<int> ModelConfig::scale_widths() const {
    std::vector<int> w;
    for (int s = 1; s <= scales; ++s) {
        double mult = s == 1 ? 1.5 : (s == 2 ? 2.0 : 3.0);
        int width = static_cast<int>(std::lround(base_width * mult));
        if (width % 2) ++width;
        w.push_back(width);
    }
    return w;
}

ModelConfig apply_ablation(ModelConfig cfg, const std::string& name) {
    if (name.empty() || name == "none" || name == "default") return cfg;
    if (name == "no_soan") {
        cfg.enable_soan = false;
    } else if (name == "no_saat") {
        cfg.enable_saat = false;
    } else if (name == "soan_bn") {
        cfg.soan.variant = SoanVariant::BatchNorm;
    } else if (name == "soan_in") {
        cfg.soan.variant = SoanVariant::InstanceNorm;
    } else if (name == "saat_hardmask") {
        cfg.saat_mask_mode = SaatMaskMode::Hard;
    } else {
        throw std::invalid_argument("unknown ablation '" + name +
                                    "' (expected none|no_soan|no_saat|soan_bn|soan_in|saat_hardmask)");
    }
    return cfg;
}

// ---- perceptual extractor ----

template <typename T>
const double PerceptualExtractorT<T>::kStageWeights[PerceptualExtractorT<T>::kStages] = {
    1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0};

template <typename T>
PerceptualExtractorT<T>::PerceptualExtractorT(Rng& rng) {
    const int widths[kStages] = {16, 32, 48, 64, 64};
    int prev = 3;
    for (int s = 0; s < kStages; ++s) {
        convs.emplace_back(prev, widths[s], 3, 2, 1, rng);
        convs.back().w.set_requires_grad(false);
        convs.back().b.set_requires_grad(false);
        prev = widths[s];
    }
}

template <typename T>
std::vector<TensorT<T>> PerceptualExtractorT<T>::stages(const TensorT<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != 3) {
        throw std::invalid_argument("PerceptualExtractor: expected [N,3,H,W], got " + shape_str(x.shape()));
    }
    std::vector<TensorT<T>> out;
    TensorT<T> cur = x;
    for (const auto& conv : convs) {
        cur = lrelu(conv.forward(cur));
        out.push_back(cur);
    }
    return out;
}

template <typename T>
void PerceptualExtractorT<T>::load_stage_weights(const std::vector<TensorT<T>>& weights,
                                                 const std::vector<TensorT<T>>& biases) {
    if (weights.size() != convs.size() || biases.size() != convs.size()) {
        throw std::invalid_argument("load_stage_weights: expected " + std::to_string(convs.size()) +
                                    " stages");
    }
    for (size_t s = 0; s < convs.size(); ++s) {
        if (weights[s].shape() != convs[s].w.shape() || biases[s].shape() != convs[s].b.shape()) {
            throw std::invalid_argument("load_stage_weights: stage " + std::to_string(s) + " shape mismatch");
        }
        convs[s].w = weights[s].detach_copy();
        convs[s].b = biases[s].detach_copy();
    }
}

// ---- losses ----

template <typename T>
TensorT<T> loss_per(const TensorT<T>& output, const TensorT<T>& gt, const PerceptualExtractorT<T>& extractor) {
    auto fo = extractor.stages(output);
    auto fg = extractor.stages(gt);
    // rms(d) realized as sqrt(mean(d^2) + eps^2) - eps: zero at identical
    // inputs with a finite slope there.
    const T eps = T(1e-6);
    TensorT<T> total = TensorT<T>::zeros({1});
    for (int s = 0; s < PerceptualExtractorT<T>::kStages; ++s) {
        TensorT<T> msq = mean_all(square(sub(fo[static_cast<size_t>(s)], fg[static_cast<size_t>(s)])));
        TensorT<T> rms = add_scalar(sqrt(add_scalar(msq, eps * eps)), -eps);
        total = add(total, mul_scalar(rms, static_cast<T>(PerceptualExtractorT<T>::kStageWeights[s])));
    }
    return total;
}

template <typename T>
TensorT<T> laplacian(const TensorT<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("laplacian: expected [N,C,H,W]");
    const int c = x.dim(1);
    // depthwise 5-point stencil as a fixed (non-trainable) conv kernel
    TensorT<T> kernel = TensorT<T>::zeros({c, c, 3, 3});
    T* kd = kernel.data();
    for (int ch = 0; ch < c; ++ch) {
        T* k = kd + (static_cast<std::int64_t>(ch) * c + ch) * 9;
        k[1] = T(-1);
        k[3] = T(-1);
        k[4] = T(4);
        k[5] = T(-1);
        k[7] = T(-1);
    }
    return conv2d(x, kernel, TensorT<T>(), 1, 1);
}

template <typename T>
TensorT<T> loss_grad(const TensorT<T>& output, const TensorT<T>& input, const TensorT<T>& gt,
                     const TensorT<T>& dilated_mask) {
    if (output.shape() != input.shape() || output.shape() != gt.shape()) {
        throw std::invalid_argument("loss_grad: image shapes differ");
    }
    const int n = output.dim(0), h = output.dim(2), w = output.dim(3);
    TensorT<T> m;
    if (dilated_mask.ndim() == 2) {
        m = expand(reshape(dilated_mask, {1, 1, h, w}), {n, 1, h, w});
    } else if (dilated_mask.ndim() == 4) {
        m = dilated_mask;
    } else {
        throw std::invalid_argument("loss_grad: mask must be [H,W] or [N,1,H,W]");
    }
    TensorT<T> me = expand(m, output.shape());
    TensorT<T> lap_out = laplacian(output);
    TensorT<T> mse_in = square(sub(lap_out, laplacian(input)));
    TensorT<T> mse_gt = square(sub(lap_out, laplacian(gt)));
    TensorT<T> weighted = add(mul(sub_from_scalar(T(1), me), mse_in), mul(me, mse_gt));
    return mean_all(weighted);
}

template <typename T>
TensorT<T> loss_total(const TensorT<T>& rem, const TensorT<T>& soft, const TensorT<T>& per,
                      const TensorT<T>& grad, const LossWeights& lambda) {
    TensorT<T> total = mul_scalar(rem, static_cast<T>(lambda.rem));
    total = add(total, mul_scalar(soft, static_cast<T>(lambda.soft)));
    total = add(total, mul_scalar(per, static_cast<T>(lambda.per)));
    total = add(total, mul_scalar(grad, static_cast<T>(lambda.grad)));
    return total;
}

// ---- CnsNet ----

template <typename T>
CnsNetT<T>::CnsNetT(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg.scales < 2) throw std::invalid_argument("ModelConfig: scales must be >= 2");
    if (cfg.input_size % (1 << cfg.scales) != 0) {
        throw std::invalid_argument("ModelConfig: input_size must be a multiple of " +
                                    std::to_string(1 << cfg.scales));
    }
    Rng rng(cfg.init_seed);
    predictor_ = SoftMaskPredictorT<T>(cfg.predictor_width, rng);

    const std::vector<int> widths = cfg.scale_widths();
    stem_ = Conv2dT<T>(5, cfg.base_width, 3, 1, 1, rng);
    int prev = cfg.base_width;
    for (int s = 0; s < cfg.scales; ++s) {
        down_.emplace_back(prev, widths[static_cast<size_t>(s)], 3, 2, 1, rng);
        if (cfg.enable_soan) {
            enc_soan_.push_back(std::make_shared<SoanBlockT<T>>(widths[static_cast<size_t>(s)], cfg.soan, rng));
        }
        prev = widths[static_cast<size_t>(s)];
    }
    if (cfg.enable_saat) {
        SaatConfig sc;
        sc.heads = cfg.saat_heads;
        sc.layers = cfg.saat_layers;
        sc.channels = prev;
        sc.mask_mode = cfg.saat_mask_mode;
        sc.ffn_expansion = cfg.saat_ffn_expansion;
        sc.grid_h = cfg.input_size >> cfg.scales;
        sc.grid_w = cfg.input_size >> cfg.scales;
        saat_ = std::make_shared<SaatBlockT<T>>(sc, rng);
    }
    for (int s = cfg.scales - 1; s >= 0; --s) {
        const int skip_w = s == 0 ? cfg.base_width : widths[static_cast<size_t>(s - 1)];
        const int out_w = skip_w;
        up_.emplace_back(prev + skip_w, out_w, 3, 1, 1, rng);
        if (cfg.enable_soan) {
            dec_soan_.push_back(std::make_shared<SoanBlockT<T>>(out_w, cfg.soan, rng));
        }
        prev = out_w;
    }
    head_ = Conv2dT<T>(cfg.base_width, 3, 3, 1, 1, rng);

    predictor_.collect("predictor", params_);
    stem_.collect("backbone.stem", params_);
    for (size_t s = 0; s < down_.size(); ++s) {
        down_[s].collect("backbone.down" + std::to_string(s + 1), params_);
        if (cfg.enable_soan) enc_soan_[s]->collect("backbone.enc_soan" + std::to_string(s + 1), params_);
    }
    if (saat_) saat_->collect("backbone.saat", params_);
    for (size_t s = 0; s < up_.size(); ++s) {
        up_[s].collect("backbone.up" + std::to_string(up_.size() - s), params_);
        if (cfg.enable_soan) dec_soan_[s]->collect("backbone.dec_soan" + std::to_string(up_.size() - s), params_);
    }
    head_.collect("backbone.head", params_);
}

template <typename T>
typename CnsNetT<T>::Output CnsNetT<T>::forward(const TensorT<T>& shadow, const TensorT<T>& hard_mask,
                                                const TensorT<T>& soft_override) const {
    if (shadow.ndim() != 4 || shadow.dim(1) != 3) {
        throw std::invalid_argument("CnsNet: shadow must be [N,3,H,W], got " + shape_str(shadow.shape()));
    }
    const int n = shadow.dim(0), h = shadow.dim(2), w = shadow.dim(3);
    const int div = 1 << cfg_.scales;
    if (h % div != 0 || w % div != 0) {
        throw std::invalid_argument("CnsNet: input " + std::to_string(h) + "x" + std::to_string(w) +
                                    " not divisible by " + std::to_string(div) + "; pad to " +
                                    std::to_string((h + div - 1) / div * div) + "x" +
                                    std::to_string((w + div - 1) / div * div));
    }
    if (hard_mask.ndim() != 4 || hard_mask.dim(0) != n || hard_mask.dim(1) != 1 || hard_mask.dim(2) != h ||
        hard_mask.dim(3) != w) {
        throw std::invalid_argument("CnsNet: hard mask must be [N,1,H,W], got " + shape_str(hard_mask.shape()));
    }

    TensorT<T> soft = soft_override.defined()
                          ? soft_override
                          : predictor_.forward(concat<T>({shadow, hard_mask}, 1));

    // Hard-mask pyramid for SOAN guidance; constant w.r.t. the tape.
    std::vector<TensorT<T>> mask_pyramid;
    {
        NoGradGuard ng;
        TensorT<T> cur = hard_mask;
        mask_pyramid.push_back(cur);
        for (int s = 1; s <= cfg_.scales; ++s) {
            TensorT<T> m = TensorT<T>::uninit({n, 1, h >> s, w >> s});
            const int sh = h >> s, sw = w >> s;
            for (int b = 0; b < n; ++b) {
                const T* src = hard_mask.data() + static_cast<std::int64_t>(b) * h * w;
                T* dst = m.data() + static_cast<std::int64_t>(b) * sh * sw;
                for (int y = 0; y < sh; ++y)
                    for (int x = 0; x < sw; ++x)
                        dst[y * sw + x] = src[(y * h / sh) * w + (x * w / sw)];
            }
            mask_pyramid.push_back(m);
        }
    }

    TensorT<T> x = lrelu(stem_.forward(concat<T>({shadow, hard_mask, soft}, 1)));
    std::vector<TensorT<T>> skips;
    skips.push_back(x);
    for (int s = 0; s < cfg_.scales; ++s) {
        x = lrelu(down_[static_cast<size_t>(s)].forward(x));
        if (cfg_.enable_soan) x = enc_soan_[static_cast<size_t>(s)]->forward(x, mask_pyramid[static_cast<size_t>(s + 1)]);
        skips.push_back(x);
    }

    if (saat_) {
        TensorT<T> guidance = cfg_.saat_mask_mode == SaatMaskMode::Hard ? hard_mask : soft;
        TensorT<T> comp = sub_from_scalar(T(1), guidance);
        TensorT<T> comp_small = resize_bilinear(comp, h >> cfg_.scales, w >> cfg_.scales);
        x = saat_->forward(x, comp_small);
    }

    for (int s = cfg_.scales - 1; s >= 0; --s) {
        const size_t ui = static_cast<size_t>(cfg_.scales - 1 - s);
        x = upsample2x_nearest(x);
        x = concat<T>({x, skips[static_cast<size_t>(s)]}, 1);
        x = lrelu(up_[ui].forward(x));
        if (cfg_.enable_soan) x = dec_soan_[ui]->forward(x, mask_pyramid[static_cast<size_t>(s)]);
    }

    Output out;
    out.image = sigmoid(head_.forward(x));
    out.soft_mask = soft;
    return out;
}

template <typename T>
typename CnsNetT<T>::Output CnsNetT<T>::forward_single(const TensorT<T>& shadow,
                                                       const TensorT<T>& hard_mask) const {
    if (shadow.ndim() != 3 || hard_mask.ndim() != 2) {
        throw std::invalid_argument("forward_single: expected [3,H,W] and [H,W]");
    }
    const int h = shadow.dim(1), w = shadow.dim(2);
    Output out = forward(reshape(shadow, {1, 3, h, w}), reshape(hard_mask, {1, 1, h, w}));
    out.image = reshape(out.image, {3, h, w});
    out.soft_mask = reshape(out.soft_mask, {h, w});
    return out;
}

template <typename T>
std::int64_t CnsNetT<T>::param_count() const {
    std::int64_t total = 0;
    for (const auto& [name, t] : params_.items) {
        if (t.requires_grad()) total += t.numel();
    }
    return total;
}

template <typename T>
std::int64_t CnsNetT<T>::empty_region_events() const {
    std::int64_t total = 0;
    for (const auto& blk : enc_soan_) total += blk->empty_region_events();
    for (const auto& blk : dec_soan_) total += blk->empty_region_events();
    return total;
}

#define CNSNET_INSTANTIATE_MODEL(T)                                                                    \
    template class PerceptualExtractorT<T>;                                                            \
    template class CnsNetT<T>;                                                                         \
    template TensorT<T> loss_per(const TensorT<T>&, const TensorT<T>&, const PerceptualExtractorT<T>&); \
    template TensorT<T> loss_grad(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,             \
                                  const TensorT<T>&);                                                  \
    template TensorT<T> loss_total(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,            \
                                   const TensorT<T>&, const LossWeights&);                             \
    template TensorT<T> laplacian(const TensorT<T>&);

CNSNET_INSTANTIATE_MODEL(float)
CNSNET_INSTANTIATE_MODEL(double)

#undef CNSNET_INSTANTIATE_MODEL

}  // namespace cnsnet
