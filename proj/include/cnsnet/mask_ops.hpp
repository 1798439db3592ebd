#pragma once

#include "cnsnet/nn.hpp"
#include "cnsnet/tensor.hpp"
#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

// Expected soft-region mask from an aligned (shadow, shadow-free) pair:
// per channel, min-max normalize the difference over this image, take the
// absolute value, and average the three channels. A channel whose
// difference is constant (max == min) contributes zeros. Inputs [3,H,W]
// in [0,1]; output [H,W] in [0,1]. Not a tape op.
Tensor soft_mask_target(const Tensor& shadow, const Tensor& shadow_free);

// Mean absolute difference; differentiable.
template <typename T>
TensorT<T> soft_mask_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    return mean_all(abs(sub(pred, target)));
}

// Morphological dilation of a binary [H,W] mask with a
// (2r+1)x(2r+1) square structuring element.
Tensor dilate(const Tensor& mask, int radius_px);

// Plain [H,W] resizes for mask guidance; nearest preserves binarity.
Tensor resize_mask_nearest(const Tensor& mask, int target_h, int target_w);
Tensor resize_mask_bilinear(const Tensor& mask, int target_h, int target_w);

// UNet predicting the soft-region mask from concat(RGB, hard mask).
// 3 down / 3 up scales with skip connections, sigmoid output.
template <typename T>
class SoftMaskPredictorT {
public:
    SoftMaskPredictorT() = default;
    SoftMaskPredictorT(int base_width, Rng& rng);

    // x: [N,4,H,W], H and W multiples of 8 -> [N,1,H,W] in (0,1).
    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMap<T>& out);

    Conv2dT<T> stem, down1, down2, down3, up3, up2, up1, head;
};

using SoftMaskPredictor = SoftMaskPredictorT<float>;

}  // namespace cnsnet
