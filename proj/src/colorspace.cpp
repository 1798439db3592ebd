#include "cnsnet/colorspace.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cnsnet {

namespace {

inline double srgb_to_linear(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

// D65 white point, consistent with the sRGB matrix row sums.
constexpr double kXn = 0.95047;
constexpr double kYn = 1.0;
constexpr double kZn = 1.08883;

inline double lab_f(double t) {
    constexpr double delta = 6.0 / 29.0;
    constexpr double delta3 = delta * delta * delta;
    return t > delta3 ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

}  // namespace

void srgb_to_lab_pixel(double r, double g, double b, double& lab_l, double& lab_a, double& lab_b) {
    r = std::clamp(r, 0.0, 1.0);
    g = std::clamp(g, 0.0, 1.0);
    b = std::clamp(b, 0.0, 1.0);
    const double rl = srgb_to_linear(r);
    const double gl = srgb_to_linear(g);
    const double bl = srgb_to_linear(b);
    const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    const double fx = lab_f(x / kXn);
    const double fy = lab_f(y / kYn);
    const double fz = lab_f(z / kZn);
    lab_l = 116.0 * fy - 16.0;
    lab_a = 500.0 * (fx - fy);
    lab_b = 200.0 * (fy - fz);
}

Tensor srgb_to_lab(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw std::invalid_argument("srgb_to_lab: expected [3,H,W], got " + shape_str(image.shape()));
    }
    const int h = image.dim(1), w = image.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out = Tensor::uninit(image.shape());
    const float* in = image.data();
    float* ov = out.data();
    for (std::int64_t i = 0; i < plane; ++i) {
        double l, a, b;
        srgb_to_lab_pixel(in[i], in[plane + i], in[2 * plane + i], l, a, b);
        ov[i] = static_cast<float>(l);
        ov[plane + i] = static_cast<float>(a);
        ov[2 * plane + i] = static_cast<float>(b);
    }
    return out;
}

Tensor rgb_to_gray(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw std::invalid_argument("rgb_to_gray: expected [3,H,W], got " + shape_str(image.shape()));
    }
    const int h = image.dim(1), w = image.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out = Tensor::uninit({h, w});
    const float* in = image.data();
    float* ov = out.data();
    for (std::int64_t i = 0; i < plane; ++i) {
        ov[i] = static_cast<float>(0.299 * in[i] + 0.587 * in[plane + i] + 0.114 * in[2 * plane + i]);
    }
    return out;
}

}  // namespace cnsnet
