#pragma once

#include <cstdint>
#include <vector>

#include "cnsnet/tensor.hpp"

namespace cnsnet {

// Boolean mask companion to TensorT (values 0/1, never on the tape).
struct BoolMask {
    Shape shape;
    std::vector<std::uint8_t> v;

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
};

namespace debug {
// Test fixture: deliberately corrupts conv2d's input gradient so the
// gradient-check battery can prove it catches broken backward passes.
extern bool corrupt_conv_backward;
}  // namespace debug

// ---- elementwise (same shape) ----
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> divide(const TensorT<T>& a, const TensorT<T>& b);

// ---- scalar ----
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> mul_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> sub_from_scalar(T s, const TensorT<T>& a);  // s - a

// ---- unary ----
template <typename T> TensorT<T> neg(const TensorT<T>& a);
template <typename T> TensorT<T> abs(const TensorT<T>& a);
template <typename T> TensorT<T> exp(const TensorT<T>& a);
template <typename T> TensorT<T> log(const TensorT<T>& a);
template <typename T> TensorT<T> sqrt(const TensorT<T>& a);
template <typename T> TensorT<T> square(const TensorT<T>& a);
template <typename T> TensorT<T> sigmoid(const TensorT<T>& a);
template <typename T> TensorT<T> leaky_relu(const TensorT<T>& a, T slope);

// ---- shape ----
template <typename T> TensorT<T> reshape(const TensorT<T>& a, const Shape& shape);
template <typename T> TensorT<T> transpose2d(const TensorT<T>& a);
template <typename T> TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis);
template <typename T> std::vector<TensorT<T>> split(const TensorT<T>& a, int axis, const std::vector<int>& sizes);
template <typename T> TensorT<T> slice(const TensorT<T>& a, int axis, int start, int len);
// Repeats size-1 dims of `a` to match `target` (rank must agree).
template <typename T> TensorT<T> expand(const TensorT<T>& a, const Shape& target);

// ---- matrix ----
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

// ---- reductions ----
template <typename T> TensorT<T> reduce_sum(const TensorT<T>& a, const std::vector<int>& axes, bool keepdim);
template <typename T> TensorT<T> reduce_mean(const TensorT<T>& a, const std::vector<int>& axes, bool keepdim);
template <typename T> TensorT<T> reduce_var(const TensorT<T>& a, const std::vector<int>& axes, bool keepdim);
template <typename T> TensorT<T> sum_all(const TensorT<T>& a);
template <typename T> TensorT<T> mean_all(const TensorT<T>& a);

template <typename T> TensorT<T> softmax(const TensorT<T>& a, int axis);

// ---- convolution / resampling ----
// Cross-correlation, zero padding. bias may be default-constructed for none.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, int stride, int padding);
template <typename T> TensorT<T> upsample2x_nearest(const TensorT<T>& x);
template <typename T> TensorT<T> upsample2x_bilinear(const TensorT<T>& x);
template <typename T> TensorT<T> downsample2x(const TensorT<T>& x);
template <typename T> TensorT<T> resize_bilinear(const TensorT<T>& x, int out_h, int out_w);

// ---- masking ----
template <typename T> TensorT<T> masked_fill(const TensorT<T>& a, const BoolMask& m, T value);
template <typename T> TensorT<T> masked_select(const TensorT<T>& a, const BoolMask& m);

// ---- per-channel affine on [N,C,H,W] ----
template <typename T>
TensorT<T> channel_affine(const TensorT<T>& x, const TensorT<T>& scale, const TensorT<T>& bias);

// ---- operator sugar ----
template <typename T> TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) { return add(a, b); }
template <typename T> TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) { return sub(a, b); }
template <typename T> TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }
template <typename T> TensorT<T> operator/(const TensorT<T>& a, const TensorT<T>& b) { return divide(a, b); }

}  // namespace cnsnet
