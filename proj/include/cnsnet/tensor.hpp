#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "cnsnet/rng.hpp"

namespace cnsnet {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the computation tape. Holds the forward value and, once
// backward() has run, the accumulated gradient. backprop reads this
// node's grad and scatters into the parents' grads.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;

    std::vector<T>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad;
    }
};

bool grad_mode_enabled();
void set_grad_mode(bool on);

}  // namespace detail

// RAII guard disabling tape recording (inference / data preparation).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_enabled()) { detail::set_grad_mode(false); }
    ~NoGradGuard() { detail::set_grad_mode(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense row-major tensor handle with optional reverse-mode autodiff.
// Copying the handle shares the underlying node (cheap); ops never
// mutate their inputs, only optimizer updates write values in place.
template <typename T>
class TensorT {
public:
    TensorT() = default;
    explicit TensorT(std::shared_ptr<detail::Node<T>> n) : node(std::move(n)) {}

    static TensorT zeros(const Shape& shape);
    static TensorT full(const Shape& shape, T v);
    static TensorT from_data(const Shape& shape, std::vector<T> data);
    static TensorT scalar(T v) { return full({1}, v); }
    // Uninitialized storage; callers must fill every element.
    static TensorT uninit(const Shape& shape);
    static TensorT rand_uniform(const Shape& shape, T lo, T hi, Rng& rng);
    static TensorT rand_normal(const Shape& shape, T mean, T stddev, Rng& rng);

    bool defined() const { return node != nullptr; }
    const Shape& shape() const { return node->shape; }
    int dim(int i) const { return node->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node->value.size()); }

    const T* data() const { return node->value.data(); }
    T* data() { return node->value.data(); }
    const std::vector<T>& values() const { return node->value; }

    T item() const;
    T at(std::initializer_list<int> idx) const;

    bool requires_grad() const { return node->requires_grad; }
    TensorT& set_requires_grad(bool on) {
        node->requires_grad = on;
        return *this;
    }

    // Gradient accumulated by the last backward(); empty before that.
    const std::vector<T>& grad() const { return node->grad; }
    void zero_grad() {
        if (!node->grad.empty()) node->grad.assign(node->value.size(), T(0));
    }

    // Detached copy of the values (fresh leaf, no tape history).
    TensorT<T> detach_copy() const { return from_data(shape(), node->value); }

    std::shared_ptr<detail::Node<T>> node;  // exposed for op implementations
};

// Runs the tape backward from a scalar loss, populating grad on every
// requires_grad ancestor exactly once.
template <typename T>
void backward(const TensorT<T>& loss);

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace cnsnet
