#include "cnsnet/mask_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cnsnet {

Tensor soft_mask_target(const Tensor& shadow, const Tensor& shadow_free) {
    if (shadow.ndim() != 3 || shadow.dim(0) != 3) {
        throw std::invalid_argument("soft_mask_target: expected [3,H,W], got " + shape_str(shadow.shape()));
    }
    if (shadow.shape() != shadow_free.shape()) {
        throw std::invalid_argument("soft_mask_target: shape mismatch " + shape_str(shadow.shape()) +
                                    " vs " + shape_str(shadow_free.shape()));
    }
    const int h = shadow.dim(1), w = shadow.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out = Tensor::zeros({h, w});
    const float* s = shadow.data();
    const float* f = shadow_free.data();
    float* o = out.data();
    for (int c = 0; c < 3; ++c) {
        const float* sc = s + c * plane;
        const float* fc = f + c * plane;
        float lo = sc[0] - fc[0], hi = lo;
        for (std::int64_t i = 1; i < plane; ++i) {
            const float d = sc[i] - fc[i];
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        if (hi == lo) continue;  // constant difference: channel contributes zeros
        const float inv = 1.0f / (hi - lo);
        for (std::int64_t i = 0; i < plane; ++i) {
            o[i] += std::abs((sc[i] - fc[i] - lo) * inv) / 3.0f;
        }
    }
    return out;
}

Tensor dilate(const Tensor& mask, int radius_px) {
    if (mask.ndim() != 2) throw std::invalid_argument("dilate: expected [H,W]");
    if (radius_px < 0) throw std::invalid_argument("dilate: negative radius");
    if (radius_px == 0) return mask.detach_copy();
    const int h = mask.dim(0), w = mask.dim(1);
    // square element is separable: horizontal max then vertical max
    std::vector<float> tmp(static_cast<size_t>(h) * w);
    const float* m = mask.data();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float v = 0.0f;
            const int x0 = std::max(0, x - radius_px), x1 = std::min(w - 1, x + radius_px);
            for (int xx = x0; xx <= x1; ++xx) v = std::max(v, m[y * w + xx]);
            tmp[static_cast<size_t>(y) * w + x] = v;
        }
    }
    Tensor out = Tensor::uninit({h, w});
    float* o = out.data();
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - radius_px), y1 = std::min(h - 1, y + radius_px);
        for (int x = 0; x < w; ++x) {
            float v = 0.0f;
            for (int yy = y0; yy <= y1; ++yy) v = std::max(v, tmp[static_cast<size_t>(yy) * w + x]);
            o[y * w + x] = v;
        }
    }
    return out;
}

Tensor resize_mask_nearest(const Tensor& mask, int target_h, int target_w) {
    if (mask.ndim() != 2) throw std::invalid_argument("resize_mask_nearest: expected [H,W]");
    if (target_h <= 0 || target_w <= 0) throw std::invalid_argument("resize_mask: non-positive target");
    const int h = mask.dim(0), w = mask.dim(1);
    if (h == target_h && w == target_w) return mask.detach_copy();
    Tensor out = Tensor::uninit({target_h, target_w});
    const float* m = mask.data();
    for (int y = 0; y < target_h; ++y) {
        const int sy = std::min(h - 1, static_cast<int>(static_cast<std::int64_t>(y) * h / target_h));
        for (int x = 0; x < target_w; ++x) {
            const int sx = std::min(w - 1, static_cast<int>(static_cast<std::int64_t>(x) * w / target_w));
            out.data()[y * target_w + x] = m[sy * w + sx];
        }
    }
    return out;
}

Tensor resize_mask_bilinear(const Tensor& mask, int target_h, int target_w) {
    if (mask.ndim() != 2) throw std::invalid_argument("resize_mask_bilinear: expected [H,W]");
    NoGradGuard ng;
    Tensor as4d = reshape(mask, {1, 1, mask.dim(0), mask.dim(1)});
    Tensor resized = resize_bilinear(as4d, target_h, target_w);
    return reshape(resized, {target_h, target_w});
}

template <typename T>
SoftMaskPredictorT<T>::SoftMaskPredictorT(int base_width, Rng& rng) {
    const int b = base_width;
    stem = Conv2dT<T>(4, b, 3, 1, 1, rng);
    down1 = Conv2dT<T>(b, 2 * b, 3, 2, 1, rng);
    down2 = Conv2dT<T>(2 * b, 4 * b, 3, 2, 1, rng);
    down3 = Conv2dT<T>(4 * b, 4 * b, 3, 2, 1, rng);
    up3 = Conv2dT<T>(8 * b, 4 * b, 3, 1, 1, rng);
    up2 = Conv2dT<T>(6 * b, 2 * b, 3, 1, 1, rng);
    up1 = Conv2dT<T>(3 * b, b, 3, 1, 1, rng);
    head = Conv2dT<T>(b, 1, 3, 1, 1, rng);
}

template <typename T>
TensorT<T> SoftMaskPredictorT<T>::forward(const TensorT<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != 4) {
        throw std::invalid_argument("SoftMaskPredictor: expected [N,4,H,W], got " + shape_str(x.shape()));
    }
    if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
        throw std::invalid_argument("SoftMaskPredictor: H and W must be multiples of 8, got " +
                                    shape_str(x.shape()));
    }
    TensorT<T> s0 = lrelu(stem.forward(x));
    TensorT<T> s1 = lrelu(down1.forward(s0));
    TensorT<T> s2 = lrelu(down2.forward(s1));
    TensorT<T> bott = lrelu(down3.forward(s2));
    TensorT<T> u3 = lrelu(up3.forward(concat<T>({upsample2x_nearest(bott), s2}, 1)));
    TensorT<T> u2 = lrelu(up2.forward(concat<T>({upsample2x_nearest(u3), s1}, 1)));
    TensorT<T> u1 = lrelu(up1.forward(concat<T>({upsample2x_nearest(u2), s0}, 1)));
    return sigmoid(head.forward(u1));
}

template <typename T>
void SoftMaskPredictorT<T>::collect(const std::string& prefix, ParamMap<T>& out) {
    stem.collect(prefix + ".stem", out);
    down1.collect(prefix + ".down1", out);
    down2.collect(prefix + ".down2", out);
    down3.collect(prefix + ".down3", out);
    up3.collect(prefix + ".up3", out);
    up2.collect(prefix + ".up2", out);
    up1.collect(prefix + ".up1", out);
    head.collect(prefix + ".head", out);
}

template class SoftMaskPredictorT<float>;
template class SoftMaskPredictorT<double>;

}  // namespace cnsnet
