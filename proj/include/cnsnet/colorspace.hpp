#pragma once

#include "cnsnet/tensor.hpp"

namespace cnsnet {

// sRGB in [0,1] -> CIELAB, D65 two-degree observer.
void srgb_to_lab_pixel(double r, double g, double b, double& lab_l, double& lab_a, double& lab_b);

// image: [3,H,W] in [0,1] (clamped internally). Output L in [0,100],
// a/b signed. Never participates in the tape.
Tensor srgb_to_lab(const Tensor& image);

// ITU-R 601 luma from [3,H,W] RGB -> [H,W].
Tensor rgb_to_gray(const Tensor& image);

}  // namespace cnsnet
