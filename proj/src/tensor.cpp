#include "cnsnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

extern "C" void openblas_set_num_threads(int);

namespace cnsnet {

namespace {
// Single-threaded BLAS keeps every run bit-reproducible for a given seed.
const bool blas_threads_pinned = [] {
    openblas_set_num_threads(1);
    return true;
}();
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace detail {
namespace {
thread_local bool g_grad_mode = true;
}
bool grad_mode_enabled() { return g_grad_mode; }
void set_grad_mode(bool on) { g_grad_mode = on; }
}  // namespace detail

template <typename T>
TensorT<T> TensorT<T>::uninit(const Shape& shape) {
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape with non-positive extent " + shape_str(shape));
    }
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = shape;
    n->value.resize(static_cast<size_t>(shape_numel(shape)));
    return TensorT<T>(std::move(n));
}

template <typename T>
TensorT<T> TensorT<T>::zeros(const Shape& shape) {
    return full(shape, T(0));
}

template <typename T>
TensorT<T> TensorT<T>::full(const Shape& shape, T v) {
    TensorT<T> t = uninit(shape);
    std::fill(t.node->value.begin(), t.node->value.end(), v);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_data(const Shape& shape, std::vector<T> data) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                    " values for shape " + shape_str(shape));
    }
    TensorT<T> t = uninit(shape);
    t.node->value = std::move(data);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::rand_uniform(const Shape& shape, T lo, T hi, Rng& rng) {
    TensorT<T> t = uninit(shape);
    for (auto& v : t.node->value) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::rand_normal(const Shape& shape, T mean, T stddev, Rng& rng) {
    TensorT<T> t = uninit(shape);
    for (auto& v : t.node->value)
        v = static_cast<T>(static_cast<double>(mean) + static_cast<double>(stddev) * rng.normal());
    return t;
}

template <typename T>
T TensorT<T>::item() const {
    if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
    return node->value[0];
}

template <typename T>
T TensorT<T>::at(std::initializer_list<int> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw std::invalid_argument("at(): rank mismatch");
    std::int64_t flat = 0;
    size_t i = 0;
    for (int v : idx) {
        if (v < 0 || v >= s[i]) throw std::out_of_range("at(): index out of range");
        flat = flat * s[i] + v;
        ++i;
    }
    return node->value[static_cast<size_t>(flat)];
}

template <typename T>
void backward(const TensorT<T>& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    using NodeT = detail::Node<T>;

    // Iterative post-order DFS; each node appears once in topo order.
    std::vector<NodeT*> topo;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, size_t>> stack;
    stack.emplace_back(loss.node.get(), 0);
    visited.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [n, next_child] = stack.back();
        if (next_child < n->parents.size()) {
            NodeT* p = n->parents[next_child].get();
            ++next_child;
            if (p && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    loss.node->ensure_grad()[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        NodeT* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

template class TensorT<float>;
template class TensorT<double>;
template void backward<float>(const TensorT<float>&);
template void backward<double>(const TensorT<double>&);

}  // namespace cnsnet
