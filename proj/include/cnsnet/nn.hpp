#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cnsnet/tensor.hpp"
#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

// Ordered name -> parameter registry; iteration order is construction
// order, which fixes initialization and checkpoint layout.
template <typename T>
struct ParamMap {
    std::vector<std::pair<std::string, TensorT<T>>> items;

    void add(const std::string& name, const TensorT<T>& t);
    TensorT<T>* find(const std::string& name);
    std::int64_t total_scalars() const;
};

// Kaiming-uniform fan-in initialization with leaky-relu gain.
template <typename T>
TensorT<T> kaiming_uniform(const Shape& shape, int fan_in, T slope, Rng& rng);

template <typename T>
class Conv2dT {
public:
    Conv2dT() = default;
    Conv2dT(int in_ch, int out_ch, int ksize, int stride, int padding, Rng& rng, bool bias = true);

    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMap<T>& out);

    TensorT<T> w;  // [Co,C,k,k]
    TensorT<T> b;  // [Co] or undefined

private:
    int stride_ = 1;
    int padding_ = 0;
};

template <typename T>
class LinearT {
public:
    LinearT() = default;
    LinearT(int in_features, int out_features, Rng& rng, bool bias = true);

    // x: [n, in] -> [n, out]
    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMap<T>& out);

    TensorT<T> w;  // [in, out]
    TensorT<T> b;  // [out] or undefined
};

// Normalizes over the last axis of a rank-2 tensor, learnable affine.
template <typename T>
class LayerNormT {
public:
    LayerNormT() = default;
    explicit LayerNormT(int features, T eps = T(1e-5));

    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMap<T>& out);

    TensorT<T> gamma, beta;

private:
    T eps_ = T(1e-5);
};

constexpr double kLeakySlope = 0.2;

template <typename T>
TensorT<T> lrelu(const TensorT<T>& x) {
    return leaky_relu(x, static_cast<T>(kLeakySlope));
}

}  // namespace cnsnet
