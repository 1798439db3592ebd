#include "cnsnet/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace cnsnet {

template <typename T>
void ParamMap<T>::add(const std::string& name, const TensorT<T>& t) {
    for (const auto& [n, _] : items) {
        if (n == name) throw std::logic_error("duplicate parameter name: " + name);
    }
    items.emplace_back(name, t);
}

template <typename T>
TensorT<T>* ParamMap<T>::find(const std::string& name) {
    for (auto& [n, t] : items) {
        if (n == name) return &t;
    }
    return nullptr;
}

template <typename T>
std::int64_t ParamMap<T>::total_scalars() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : items) n += t.numel();
    return n;
}

template <typename T>
TensorT<T> kaiming_uniform(const Shape& shape, int fan_in, T slope, Rng& rng) {
    const double gain = std::sqrt(2.0 / (1.0 + static_cast<double>(slope) * slope));
    const T bound = static_cast<T>(gain * std::sqrt(3.0 / fan_in));
    return TensorT<T>::rand_uniform(shape, -bound, bound, rng);
}

template <typename T>
Conv2dT<T>::Conv2dT(int in_ch, int out_ch, int ksize, int stride, int padding, Rng& rng, bool bias)
    : stride_(stride), padding_(padding) {
    w = kaiming_uniform<T>({out_ch, in_ch, ksize, ksize}, in_ch * ksize * ksize,
                           static_cast<T>(kLeakySlope), rng);
    w.set_requires_grad(true);
    if (bias) {
        b = TensorT<T>::zeros({out_ch});
        b.set_requires_grad(true);
    }
}

template <typename T>
TensorT<T> Conv2dT<T>::forward(const TensorT<T>& x) const {
    return conv2d(x, w, b, stride_, padding_);
}

template <typename T>
void Conv2dT<T>::collect(const std::string& prefix, ParamMap<T>& out) {
    out.add(prefix + ".w", w);
    if (b.defined()) out.add(prefix + ".b", b);
}

template <typename T>
LinearT<T>::LinearT(int in_features, int out_features, Rng& rng, bool bias) {
    w = kaiming_uniform<T>({in_features, out_features}, in_features, static_cast<T>(kLeakySlope), rng);
    w.set_requires_grad(true);
    if (bias) {
        b = TensorT<T>::zeros({out_features});
        b.set_requires_grad(true);
    }
}

template <typename T>
TensorT<T> LinearT<T>::forward(const TensorT<T>& x) const {
    TensorT<T> y = matmul(x, w);
    if (b.defined()) y = add(y, expand(reshape(b, {1, b.dim(0)}), y.shape()));
    return y;
}

template <typename T>
void LinearT<T>::collect(const std::string& prefix, ParamMap<T>& out) {
    out.add(prefix + ".w", w);
    if (b.defined()) out.add(prefix + ".b", b);
}

template <typename T>
LayerNormT<T>::LayerNormT(int features, T eps) : eps_(eps) {
    gamma = TensorT<T>::full({features}, T(1));
    gamma.set_requires_grad(true);
    beta = TensorT<T>::zeros({features});
    beta.set_requires_grad(true);
}

template <typename T>
TensorT<T> LayerNormT<T>::forward(const TensorT<T>& x) const {
    if (x.ndim() != 2 || x.dim(1) != gamma.dim(0)) {
        throw std::invalid_argument("LayerNorm: expected [n," + std::to_string(gamma.dim(0)) + "], got " +
                                    shape_str(x.shape()));
    }
    const int n = x.dim(0), c = x.dim(1);
    TensorT<T> mu = reduce_mean(x, {1}, true);
    TensorT<T> centered = sub(x, expand(mu, x.shape()));
    TensorT<T> var = reduce_mean(square(centered), {1}, true);
    TensorT<T> norm = divide(centered, expand(sqrt(add_scalar(var, eps_)), x.shape()));
    TensorT<T> g = expand(reshape(gamma, {1, c}), {n, c});
    TensorT<T> bt = expand(reshape(beta, {1, c}), {n, c});
    return add(mul(norm, g), bt);
}

template <typename T>
void LayerNormT<T>::collect(const std::string& prefix, ParamMap<T>& out) {
    out.add(prefix + ".gamma", gamma);
    out.add(prefix + ".beta", beta);
}

template struct ParamMap<float>;
template struct ParamMap<double>;
template TensorT<float> kaiming_uniform(const Shape&, int, float, Rng&);
template TensorT<double> kaiming_uniform(const Shape&, int, double, Rng&);
template class Conv2dT<float>;
template class Conv2dT<double>;
template class LinearT<float>;
template class LinearT<double>;
template class LayerNormT<float>;
template class LayerNormT<double>;

}  // namespace cnsnet
