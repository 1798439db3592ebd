#include "cnsnet/tensor_ops.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace cnsnet {

namespace debug {
bool corrupt_conv_backward = false;
}

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
bool tape_on(std::initializer_list<const TensorT<T>*> ins) {
    if (!detail::grad_mode_enabled()) return false;
    for (const auto* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Generic unary: f(x) -> y, df(x, y) -> dy/dx.
template <typename T, typename F, typename DF>
TensorT<T> unary_op(const TensorT<T>& a, F f, DF df) {
    TensorT<T> out = TensorT<T>::uninit(a.shape());
    const std::int64_t n = a.numel();
    const T* av = a.data();
    T* ov = out.data();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = f(av[i]);
    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        out.node->backprop = [an, df](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            const std::int64_t m = static_cast<std::int64_t>(self.value.size());
            for (std::int64_t i = 0; i < m; ++i) ag[i] += self.grad[i] * df(an->value[i], self.value[i]);
        };
    }
    return out;
}

// Generic elementwise binary with per-element partial derivatives.
template <typename T, typename F, typename DA, typename DB>
TensorT<T> binary_op(const char* name, const TensorT<T>& a, const TensorT<T>& b, F f, DA da, DB db) {
    check_same_shape(name, a, b);
    TensorT<T> out = TensorT<T>::uninit(a.shape());
    const std::int64_t n = a.numel();
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = f(av[i], bv[i]);
    if (tape_on<T>({&a, &b})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node, b.node};
        NodePtr<T> an = a.node, bn = b.node;
        out.node->backprop = [an, bn, da, db](detail::Node<T>& self) {
            const std::int64_t m = static_cast<std::int64_t>(self.value.size());
            if (an->requires_grad) {
                auto& ag = an->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) ag[i] += self.grad[i] * da(an->value[i], bn->value[i]);
            }
            if (bn->requires_grad) {
                auto& bg = bn->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) bg[i] += self.grad[i] * db(an->value[i], bn->value[i]);
            }
        };
    }
    return out;
}

Shape drop_axes(const Shape& in, const std::vector<int>& axes, bool keepdim) {
    std::vector<char> reduced(in.size(), 0);
    for (int a : axes) {
        if (a < 0 || a >= static_cast<int>(in.size())) throw std::invalid_argument("reduce: axis out of range");
        reduced[static_cast<size_t>(a)] = 1;
    }
    Shape out;
    for (size_t d = 0; d < in.size(); ++d) {
        if (reduced[d]) {
            if (keepdim) out.push_back(1);
        } else {
            out.push_back(in[d]);
        }
    }
    if (out.empty()) out.push_back(1);
    return out;
}

// For each input flat index, the flat index of the reduction output cell.
std::vector<std::int64_t> reduction_map(const Shape& in, const std::vector<int>& axes) {
    std::vector<char> reduced(in.size(), 0);
    for (int a : axes) reduced[static_cast<size_t>(a)] = 1;
    const size_t rank = in.size();
    std::vector<std::int64_t> out_stride(rank, 0);
    std::int64_t stride = 1;
    for (size_t d = rank; d-- > 0;) {
        if (!reduced[d]) {
            out_stride[d] = stride;
            stride *= in[d];
        }
    }
    const std::int64_t n = shape_numel(in);
    std::vector<std::int64_t> map(static_cast<size_t>(n));
    std::vector<int> coord(rank, 0);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t o = 0;
        for (size_t d = 0; d < rank; ++d) o += coord[d] * out_stride[d];
        map[static_cast<size_t>(i)] = o;
        for (size_t d = rank; d-- > 0;) {
            if (++coord[d] < in[d]) break;
            coord[d] = 0;
        }
    }
    return map;
}

}  // namespace

// ---------------- elementwise ----------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op("add", a, b, [](T x, T y) { return x + y; },
                     [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op("sub", a, b, [](T x, T y) { return x - y; },
                     [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op("mul", a, b, [](T x, T y) { return x * y; },
                     [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
TensorT<T> divide(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op("divide", a, b, [](T x, T y) { return x / y; },
                     [](T, T y) { return T(1) / y; },
                     [](T x, T y) { return -x / (y * y); });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    return unary_op(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
    return unary_op(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
TensorT<T> sub_from_scalar(T s, const TensorT<T>& a) {
    return unary_op(a, [s](T x) { return s - x; }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> abs(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return std::abs(x); },
                    [](T x, T) { return x < T(0) ? T(-1) : T(1); });
}

template <typename T>
TensorT<T> exp(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
TensorT<T> log(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
TensorT<T> sqrt(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return std::sqrt(x); },
                    [](T, T y) { return T(0.5) / y; });
}

template <typename T>
TensorT<T> square(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                    [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& a, T slope) {
    return unary_op(a, [slope](T x) { return x >= T(0) ? x : slope * x; },
                    [slope](T x, T) { return x >= T(0) ? T(1) : slope; });
}

// ---------------- shape ----------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    TensorT<T> out = TensorT<T>::from_data(shape, a.values());
    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        out.node->backprop = [an](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ag[i] += self.grad[i];
        };
    }
    return out;
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose2d: expected rank 2, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    TensorT<T> out = TensorT<T>::uninit({n, m});
    const T* av = a.data();
    T* ov = out.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        out.node->backprop = [an, m, n](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) ag[i * n + j] += self.grad[j * m + i];
        };
    }
    return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(s0.size())) throw std::invalid_argument("concat: axis out of range");
    int total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != static_cast<int>(s0.size())) throw std::invalid_argument("concat: rank mismatch");
        for (int d = 0; d < p.ndim(); ++d) {
            if (d != axis && p.dim(d) != s0[static_cast<size_t>(d)]) {
                throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                            shape_str(s0));
            }
        }
        total += p.dim(axis);
    }
    Shape os = s0;
    os[static_cast<size_t>(axis)] = total;

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(axis) + 1; d < s0.size(); ++d) inner *= s0[d];

    TensorT<T> out = TensorT<T>::uninit(os);
    T* ov = out.data();
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t len = p.dim(axis) * inner;
        const T* pv = p.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(ov + o * (total * inner) + off, pv + o * len, static_cast<size_t>(len) * sizeof(T));
        off += len;
    }

    bool any_grad = false;
    for (const auto& p : parts)
        if (p.requires_grad()) any_grad = true;
    if (detail::grad_mode_enabled() && any_grad) {
        out.node->requires_grad = true;
        std::vector<NodePtr<T>> ps;
        std::vector<std::int64_t> lens;
        for (const auto& p : parts) {
            out.node->parents.push_back(p.node);
            ps.push_back(p.node);
            lens.push_back(p.dim(axis) * inner);
        }
        const std::int64_t row = static_cast<std::int64_t>(total) * inner;
        out.node->backprop = [ps, lens, outer, row](detail::Node<T>& self) {
            std::int64_t off2 = 0;
            for (size_t k = 0; k < ps.size(); ++k) {
                if (ps[k]->requires_grad) {
                    auto& pg = ps[k]->ensure_grad();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const T* g = self.grad.data() + o * row + off2;
                        T* dst = pg.data() + o * lens[k];
                        for (std::int64_t i = 0; i < lens[k]; ++i) dst[i] += g[i];
                    }
                }
                off2 += lens[k];
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, int axis, int start, int len) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size())) throw std::invalid_argument("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > s[static_cast<size_t>(axis)]) {
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") exceeds axis extent " +
                                    std::to_string(s[static_cast<size_t>(axis)]));
    }
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];
    const std::int64_t in_row = static_cast<std::int64_t>(s[static_cast<size_t>(axis)]) * inner;
    const std::int64_t out_row = static_cast<std::int64_t>(len) * inner;

    Shape os = s;
    os[static_cast<size_t>(axis)] = len;
    TensorT<T> out = TensorT<T>::uninit(os);
    const T* av = a.data();
    T* ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(ov + o * out_row, av + o * in_row + start * inner, static_cast<size_t>(out_row) * sizeof(T));

    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        const std::int64_t off = static_cast<std::int64_t>(start) * inner;
        out.node->backprop = [an, outer, in_row, out_row, off](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                const T* g = self.grad.data() + o * out_row;
                T* dst = ag.data() + o * in_row + off;
                for (std::int64_t i = 0; i < out_row; ++i) dst[i] += g[i];
            }
        };
    }
    return out;
}

template <typename T>
std::vector<TensorT<T>> split(const TensorT<T>& a, int axis, const std::vector<int>& sizes) {
    int total = 0;
    for (int v : sizes) total += v;
    if (axis < 0 || axis >= a.ndim() || total != a.dim(axis)) {
        throw std::invalid_argument("split: sizes do not cover axis extent");
    }
    std::vector<TensorT<T>> out;
    int start = 0;
    for (int v : sizes) {
        out.push_back(slice(a, axis, start, v));
        start += v;
    }
    return out;
}

template <typename T>
TensorT<T> expand(const TensorT<T>& a, const Shape& target) {
    const Shape& s = a.shape();
    if (s.size() != target.size()) throw std::invalid_argument("expand: rank mismatch");
    const size_t rank = s.size();
    for (size_t d = 0; d < rank; ++d) {
        if (s[d] != target[d] && s[d] != 1) {
            throw std::invalid_argument("expand: cannot expand " + shape_str(s) + " to " + shape_str(target));
        }
    }
    std::vector<std::int64_t> src_stride(rank);
    std::int64_t st = 1;
    for (size_t d = rank; d-- > 0;) {
        src_stride[d] = (s[d] == 1) ? 0 : st;
        st *= s[d];
    }
    const std::int64_t n = shape_numel(target);
    TensorT<T> out = TensorT<T>::uninit(target);
    const T* av = a.data();
    T* ov = out.data();
    std::vector<int> coord(rank, 0);
    std::vector<std::int64_t> src_index(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t si = 0;
        for (size_t d = 0; d < rank; ++d) si += coord[d] * src_stride[d];
        src_index[static_cast<size_t>(i)] = si;
        ov[i] = av[si];
        for (size_t d = rank; d-- > 0;) {
            if (++coord[d] < target[d]) break;
            coord[d] = 0;
        }
    }
    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        auto map = std::make_shared<std::vector<std::int64_t>>(std::move(src_index));
        out.node->backprop = [an, map](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ag[static_cast<size_t>((*map)[i])] += self.grad[i];
        };
    }
    return out;
}

// ---------------- matmul ----------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> out = TensorT<T>::uninit({m, n});
    gemm(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), out.data(), n);
    if (tape_on<T>({&a, &b})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node, b.node};
        NodePtr<T> an = a.node, bn = b.node;
        out.node->backprop = [an, bn, m, k, n](detail::Node<T>& self) {
            if (an->requires_grad) {
                auto& ag = an->ensure_grad();
                // dA += dC * B^T
                gemm(false, true, m, k, n, T(1), self.grad.data(), n, bn->value.data(), n, T(1), ag.data(), k);
            }
            if (bn->requires_grad) {
                auto& bg = bn->ensure_grad();
                // dB += A^T * dC
                gemm(true, false, k, n, m, T(1), an->value.data(), k, self.grad.data(), n, T(1), bg.data(), n);
            }
        };
    }
    return out;
}

// ---------------- reductions ----------------

namespace {

template <typename T>
TensorT<T> reduce_impl(const TensorT<T>& a, const std::vector<int>& axes, bool keepdim, T scale) {
    Shape os = drop_axes(a.shape(), axes, keepdim);
    auto map = std::make_shared<std::vector<std::int64_t>>(reduction_map(a.shape(), axes));
    TensorT<T> out = TensorT<T>::zeros(os);
    const T* av = a.data();
    T* ov = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) ov[(*map)[static_cast<size_t>(i)]] += av[i];
    if (scale != T(1)) {
        for (std::int64_t i = 0; i < out.numel(); ++i) ov[i] *= scale;
    }
    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        out.node->backprop = [an, map, scale](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            for (size_t i = 0; i < ag.size(); ++i) ag[i] += scale * self.grad[static_cast<size_t>((*map)[i])];
        };
    }
    return out;
}

}  // namespace

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& a, const std::vector<int>& axes, bool keepdim) {
    return reduce_impl(a, axes, keepdim, T(1));
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& a, const std::vector<int>& axes, bool keepdim) {
    std::int64_t count = 1;
    for (int ax : axes) count *= a.dim(ax);
    return reduce_impl(a, axes, keepdim, T(1) / static_cast<T>(count));
}

template <typename T>
TensorT<T> reduce_var(const TensorT<T>& a, const std::vector<int>& axes, bool keepdim) {
    TensorT<T> mu = reduce_mean(a, axes, true);
    TensorT<T> centered = sub(a, expand(mu, a.shape()));
    TensorT<T> v = reduce_mean(square(centered), axes, keepdim);
    return v;
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
    std::vector<int> axes(static_cast<size_t>(a.ndim()));
    for (int d = 0; d < a.ndim(); ++d) axes[static_cast<size_t>(d)] = d;
    return reduce_sum(a, axes, false);
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
    std::vector<int> axes(static_cast<size_t>(a.ndim()));
    for (int d = 0; d < a.ndim(); ++d) axes[static_cast<size_t>(d)] = d;
    return reduce_mean(a, axes, false);
}

// ---------------- softmax ----------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= a.ndim()) throw std::invalid_argument("softmax: axis out of range");
    std::int64_t outer = 1, inner = 1;
    const int len = s[static_cast<size_t>(axis)];
    for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];

    TensorT<T> out = TensorT<T>::uninit(s);
    const T* av = a.data();
    T* ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            T mx = av[base];
            for (int i = 1; i < len; ++i) mx = std::max(mx, av[base + i * inner]);
            T sum = T(0);
            for (int i = 0; i < len; ++i) {
                const T e = std::exp(av[base + i * inner] - mx);
                ov[base + i * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (int i = 0; i < len; ++i) ov[base + i * inner] *= inv;
        }
    }
    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        out.node->backprop = [an, outer, inner, len](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * len * inner + in;
                    T dot = T(0);
                    for (int i = 0; i < len; ++i) dot += self.grad[base + i * inner] * self.value[base + i * inner];
                    for (int i = 0; i < len; ++i) {
                        const std::int64_t at = base + i * inner;
                        ag[at] += self.value[at] * (self.grad[at] - dot);
                    }
                }
            }
        };
    }
    return out;
}

// ---------------- conv2d ----------------

namespace {

template <typename T>
void im2col(const T* x, int ch, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow, T* cols) {
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;
    for (int c = 0; c < ch; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                T* row = cols + ((static_cast<std::int64_t>(c) * kh + i) * kw + j) * plane;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y * stride + i - pad;
                    if (sy < 0 || sy >= h) {
                        std::fill(row + static_cast<std::int64_t>(y) * ow, row + (static_cast<std::int64_t>(y) + 1) * ow, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::int64_t>(c) * h + sy) * w;
                    T* dst = row + static_cast<std::int64_t>(y) * ow;
                    for (int xo = 0; xo < ow; ++xo) {
                        const int sx = xo * stride + j - pad;
                        dst[xo] = (sx >= 0 && sx < w) ? src[sx] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, int ch, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow, T* dx) {
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;
    for (int c = 0; c < ch; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const T* row = cols + ((static_cast<std::int64_t>(c) * kh + i) * kw + j) * plane;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y * stride + i - pad;
                    if (sy < 0 || sy >= h) continue;
                    T* dst = dx + (static_cast<std::int64_t>(c) * h + sy) * w;
                    const T* src = row + static_cast<std::int64_t>(y) * ow;
                    for (int xo = 0; xo < ow; ++xo) {
                        const int sx = xo * stride + j - pad;
                        if (sx >= 0 && sx < w) dst[sx] += src[xo];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, int stride, int padding) {
    if (x.ndim() != 4) throw std::invalid_argument("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    if (w.ndim() != 4) throw std::invalid_argument("conv2d: weight must be [Co,C,kh,kw], got " + shape_str(w.shape()));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wid = x.dim(3);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != c) {
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(w.dim(1)) +
                                    " input channels, input has " + std::to_string(c));
    }
    if (h + 2 * padding < kh || wid + 2 * padding < kw) {
        throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " exceeds padded input " + std::to_string(h + 2 * padding) + "x" +
                                    std::to_string(wid + 2 * padding));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.ndim() != 1 || bias.dim(0) != co)) {
        throw std::invalid_argument("conv2d: bias must be [Co]=" + std::to_string(co) + ", got " +
                                    shape_str(bias.shape()));
    }
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (wid + 2 * padding - kw) / stride + 1;
    const std::int64_t ckk = static_cast<std::int64_t>(c) * kh * kw;
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;

    TensorT<T> out = TensorT<T>::uninit({n, co, oh, ow});
    // im2col buffers are kept for the weight-gradient GEMM in backward.
    auto cols = std::make_shared<std::vector<T>>(static_cast<size_t>(n) * ckk * plane);
    for (int b = 0; b < n; ++b) {
        T* cb = cols->data() + static_cast<std::int64_t>(b) * ckk * plane;
        im2col(x.data() + static_cast<std::int64_t>(b) * c * h * wid, c, h, wid, kh, kw, stride, padding, oh, ow, cb);
        gemm(false, false, co, static_cast<int>(plane), static_cast<int>(ckk), T(1), w.data(),
             static_cast<int>(ckk), cb, static_cast<int>(plane), T(0),
             out.data() + static_cast<std::int64_t>(b) * co * plane, static_cast<int>(plane));
    }
    if (has_bias) {
        T* ov = out.data();
        for (int b = 0; b < n; ++b)
            for (int o = 0; o < co; ++o) {
                const T bv = bias.data()[o];
                T* dst = ov + (static_cast<std::int64_t>(b) * co + o) * plane;
                for (std::int64_t i = 0; i < plane; ++i) dst[i] += bv;
            }
    }

    const bool tape = has_bias ? tape_on<T>({&x, &w, &bias}) : tape_on<T>({&x, &w});
    if (tape) {
        out.node->requires_grad = true;
        out.node->parents = {x.node, w.node};
        if (has_bias) out.node->parents.push_back(bias.node);
        NodePtr<T> xn = x.node, wn = w.node;
        NodePtr<T> bn = has_bias ? bias.node : nullptr;
        const int geo[8] = {n, c, h, wid, co, kh, kw, stride};
        const int pad = padding, goh = oh, gow = ow;
        out.node->backprop = [xn, wn, bn, cols, geo, pad, goh, gow, ckk, plane](detail::Node<T>& self) {
            const int n_ = geo[0], c_ = geo[1], h_ = geo[2], w_ = geo[3];
            const int co_ = geo[4], kh_ = geo[5], kw_ = geo[6], stride_ = geo[7];
            if (wn->requires_grad) {
                auto& wg = wn->ensure_grad();
                for (int b = 0; b < n_; ++b) {
                    gemm(false, true, co_, static_cast<int>(ckk), static_cast<int>(plane), T(1),
                         self.grad.data() + static_cast<std::int64_t>(b) * co_ * plane, static_cast<int>(plane),
                         cols->data() + static_cast<std::int64_t>(b) * ckk * plane, static_cast<int>(plane), T(1),
                         wg.data(), static_cast<int>(ckk));
                }
            }
            if (xn->requires_grad) {
                auto& xg = xn->ensure_grad();
                std::vector<T> dcols(static_cast<size_t>(ckk * plane));
                for (int b = 0; b < n_; ++b) {
                    gemm(true, false, static_cast<int>(ckk), static_cast<int>(plane), co_, T(1), wn->value.data(),
                         static_cast<int>(ckk), self.grad.data() + static_cast<std::int64_t>(b) * co_ * plane,
                         static_cast<int>(plane), T(0), dcols.data(), static_cast<int>(plane));
                    if (debug::corrupt_conv_backward && !dcols.empty()) dcols[0] += T(0.5);
                    col2im_add(dcols.data(), c_, h_, w_, kh_, kw_, stride_, pad, goh, gow,
                               xg.data() + static_cast<std::int64_t>(b) * c_ * h_ * w_);
                }
            }
            if (bn && bn->requires_grad) {
                auto& bg = bn->ensure_grad();
                for (int b = 0; b < n_; ++b)
                    for (int o = 0; o < co_; ++o) {
                        const T* g = self.grad.data() + (static_cast<std::int64_t>(b) * co_ + o) * plane;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < plane; ++i) acc += g[i];
                        bg[static_cast<size_t>(o)] += acc;
                    }
            }
        };
    }
    return out;
}

// ---------------- resampling ----------------

template <typename T>
TensorT<T> upsample2x_nearest(const TensorT<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("upsample2x_nearest: expected [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<T> out = TensorT<T>::uninit({n, c, 2 * h, 2 * w});
    const T* xv = x.data();
    T* ov = out.data();
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = xv + p * h * w;
        T* dst = ov + p * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
    if (tape_on<T>({&x})) {
        out.node->requires_grad = true;
        out.node->parents = {x.node};
        NodePtr<T> xn = x.node;
        out.node->backprop = [xn, planes, h, w](detail::Node<T>& self) {
            if (!xn->requires_grad) return;
            auto& xg = xn->ensure_grad();
            for (std::int64_t p = 0; p < planes; ++p) {
                const T* g = self.grad.data() + p * 4 * h * w;
                T* dst = xg.data() + p * h * w;
                for (int y = 0; y < 2 * h; ++y)
                    for (int xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += g[y * 2 * w + xx];
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> downsample2x(const TensorT<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("downsample2x: expected [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = (h + 1) / 2, ow = (w + 1) / 2;
    TensorT<T> out = TensorT<T>::uninit({n, c, oh, ow});
    const T* xv = x.data();
    T* ov = out.data();
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = xv + p * h * w;
        T* dst = ov + p * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(2 * y) * w + 2 * xx];
    }
    if (tape_on<T>({&x})) {
        out.node->requires_grad = true;
        out.node->parents = {x.node};
        NodePtr<T> xn = x.node;
        out.node->backprop = [xn, planes, h, w, oh, ow](detail::Node<T>& self) {
            if (!xn->requires_grad) return;
            auto& xg = xn->ensure_grad();
            for (std::int64_t p = 0; p < planes; ++p) {
                const T* g = self.grad.data() + p * oh * ow;
                T* dst = xg.data() + p * h * w;
                for (int y = 0; y < oh; ++y)
                    for (int xx = 0; xx < ow; ++xx) dst[(2 * y) * w + 2 * xx] += g[y * ow + xx];
            }
        };
    }
    return out;
}

namespace {

struct BilinearTap {
    int i0, i1;
    double w1;  // weight of i1; i0 gets 1-w1
};

// align_corners=false sampling with border clamp.
std::vector<BilinearTap> bilinear_taps(int in, int out) {
    std::vector<BilinearTap> taps(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        if (src > in - 1) src = in - 1;
        const int i0 = static_cast<int>(src);
        const int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<size_t>(o)] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace

template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& x, int out_h, int out_w) {
    if (x.ndim() != 4) throw std::invalid_argument("resize_bilinear: expected [N,C,H,W]");
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: non-positive target size");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto ty = bilinear_taps(h, out_h);
    const auto tx = bilinear_taps(w, out_w);
    TensorT<T> out = TensorT<T>::uninit({n, c, out_h, out_w});
    const T* xv = x.data();
    T* ov = out.data();
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = xv + p * h * w;
        T* dst = ov + p * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const auto& a = ty[static_cast<size_t>(y)];
            for (int xx = 0; xx < out_w; ++xx) {
                const auto& b = tx[static_cast<size_t>(xx)];
                const double v00 = src[a.i0 * w + b.i0], v01 = src[a.i0 * w + b.i1];
                const double v10 = src[a.i1 * w + b.i0], v11 = src[a.i1 * w + b.i1];
                const double top = v00 + (v01 - v00) * b.w1;
                const double bot = v10 + (v11 - v10) * b.w1;
                dst[y * out_w + xx] = static_cast<T>(top + (bot - top) * a.w1);
            }
        }
    }
    if (tape_on<T>({&x})) {
        out.node->requires_grad = true;
        out.node->parents = {x.node};
        NodePtr<T> xn = x.node;
        out.node->backprop = [xn, planes, h, w, out_h, out_w, ty, tx](detail::Node<T>& self) {
            if (!xn->requires_grad) return;
            auto& xg = xn->ensure_grad();
            for (std::int64_t p = 0; p < planes; ++p) {
                const T* g = self.grad.data() + p * out_h * out_w;
                T* dst = xg.data() + p * h * w;
                for (int y = 0; y < out_h; ++y) {
                    const auto& a = ty[static_cast<size_t>(y)];
                    for (int xx = 0; xx < out_w; ++xx) {
                        const auto& b = tx[static_cast<size_t>(xx)];
                        const T gv = g[y * out_w + xx];
                        dst[a.i0 * w + b.i0] += gv * static_cast<T>((1 - a.w1) * (1 - b.w1));
                        dst[a.i0 * w + b.i1] += gv * static_cast<T>((1 - a.w1) * b.w1);
                        dst[a.i1 * w + b.i0] += gv * static_cast<T>(a.w1 * (1 - b.w1));
                        dst[a.i1 * w + b.i1] += gv * static_cast<T>(a.w1 * b.w1);
                    }
                }
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> upsample2x_bilinear(const TensorT<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("upsample2x_bilinear: expected [N,C,H,W]");
    return resize_bilinear(x, 2 * x.dim(2), 2 * x.dim(3));
}

// ---------------- masking ----------------

template <typename T>
TensorT<T> masked_fill(const TensorT<T>& a, const BoolMask& m, T value) {
    if (a.shape() != m.shape) {
        throw std::invalid_argument("masked_fill: mask shape " + shape_str(m.shape) + " vs tensor " +
                                    shape_str(a.shape()));
    }
    TensorT<T> out = TensorT<T>::uninit(a.shape());
    const T* av = a.data();
    T* ov = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = m.v[static_cast<size_t>(i)] ? value : av[i];
    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        auto mv = std::make_shared<std::vector<std::uint8_t>>(m.v);
        out.node->backprop = [an, mv](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (!(*mv)[i]) ag[i] += self.grad[i];
        };
    }
    return out;
}

template <typename T>
TensorT<T> masked_select(const TensorT<T>& a, const BoolMask& m) {
    if (a.shape() != m.shape) {
        throw std::invalid_argument("masked_select: mask shape " + shape_str(m.shape) + " vs tensor " +
                                    shape_str(a.shape()));
    }
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (m.v[static_cast<size_t>(i)]) idx.push_back(i);
    if (idx.empty()) throw std::invalid_argument("masked_select: empty selection");
    TensorT<T> out = TensorT<T>::uninit({static_cast<int>(idx.size())});
    const T* av = a.data();
    T* ov = out.data();
    for (size_t i = 0; i < idx.size(); ++i) ov[i] = av[idx[i]];
    if (tape_on<T>({&a})) {
        out.node->requires_grad = true;
        out.node->parents = {a.node};
        NodePtr<T> an = a.node;
        auto map = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
        out.node->backprop = [an, map](detail::Node<T>& self) {
            if (!an->requires_grad) return;
            auto& ag = an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ag[static_cast<size_t>((*map)[i])] += self.grad[i];
        };
    }
    return out;
}

// ---------------- channel affine ----------------

template <typename T>
TensorT<T> channel_affine(const TensorT<T>& x, const TensorT<T>& scale, const TensorT<T>& bias) {
    if (x.ndim() != 4) throw std::invalid_argument("channel_affine: expected [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    if (scale.ndim() != 1 || scale.dim(0) != c || bias.ndim() != 1 || bias.dim(0) != c) {
        throw std::invalid_argument("channel_affine: scale/bias must be [C]=" + std::to_string(c));
    }
    TensorT<T> out = TensorT<T>::uninit(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T s = scale.data()[ch], bv = bias.data()[ch];
            const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) ov[off + i] = xv[off + i] * s + bv;
        }
    if (tape_on<T>({&x, &scale, &bias})) {
        out.node->requires_grad = true;
        out.node->parents = {x.node, scale.node, bias.node};
        NodePtr<T> xn = x.node, sn = scale.node, bn = bias.node;
        out.node->backprop = [xn, sn, bn, n, c, plane](detail::Node<T>& self) {
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * plane;
                    const T* g = self.grad.data() + off;
                    if (xn->requires_grad) {
                        auto& xg = xn->ensure_grad();
                        const T s = sn->value[static_cast<size_t>(ch)];
                        for (std::int64_t i = 0; i < plane; ++i) xg[off + i] += g[i] * s;
                    }
                    if (sn->requires_grad) {
                        auto& sg = sn->ensure_grad();
                        T acc = T(0);
                        for (std::int64_t i = 0; i < plane; ++i) acc += g[i] * xn->value[off + i];
                        sg[static_cast<size_t>(ch)] += acc;
                    }
                    if (bn->requires_grad) {
                        auto& bg = bn->ensure_grad();
                        T acc = T(0);
                        for (std::int64_t i = 0; i < plane; ++i) acc += g[i];
                        bg[static_cast<size_t>(ch)] += acc;
                    }
                }
        };
    }
    return out;
}

// ---------------- explicit instantiations ----------------

#define CNSNET_INSTANTIATE_OPS(T)                                                                      \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                                     \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                                     \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                                     \
    template TensorT<T> divide(const TensorT<T>&, const TensorT<T>&);                                  \
    template TensorT<T> add_scalar(const TensorT<T>&, T);                                              \
    template TensorT<T> mul_scalar(const TensorT<T>&, T);                                              \
    template TensorT<T> sub_from_scalar(T, const TensorT<T>&);                                         \
    template TensorT<T> neg(const TensorT<T>&);                                                        \
    template TensorT<T> abs(const TensorT<T>&);                                                        \
    template TensorT<T> exp(const TensorT<T>&);                                                        \
    template TensorT<T> log(const TensorT<T>&);                                                        \
    template TensorT<T> sqrt(const TensorT<T>&);                                                       \
    template TensorT<T> square(const TensorT<T>&);                                                     \
    template TensorT<T> sigmoid(const TensorT<T>&);                                                    \
    template TensorT<T> leaky_relu(const TensorT<T>&, T);                                              \
    template TensorT<T> reshape(const TensorT<T>&, const Shape&);                                      \
    template TensorT<T> transpose2d(const TensorT<T>&);                                                \
    template TensorT<T> concat(const std::vector<TensorT<T>>&, int);                                   \
    template std::vector<TensorT<T>> split(const TensorT<T>&, int, const std::vector<int>&);           \
    template TensorT<T> slice(const TensorT<T>&, int, int, int);                                       \
    template TensorT<T> expand(const TensorT<T>&, const Shape&);                                       \
    template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                                  \
    template TensorT<T> reduce_sum(const TensorT<T>&, const std::vector<int>&, bool);                  \
    template TensorT<T> reduce_mean(const TensorT<T>&, const std::vector<int>&, bool);                 \
    template TensorT<T> reduce_var(const TensorT<T>&, const std::vector<int>&, bool);                  \
    template TensorT<T> sum_all(const TensorT<T>&);                                                    \
    template TensorT<T> mean_all(const TensorT<T>&);                                                   \
    template TensorT<T> softmax(const TensorT<T>&, int);                                               \
    template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int, int);     \
    template TensorT<T> upsample2x_nearest(const TensorT<T>&);                                         \
    template TensorT<T> upsample2x_bilinear(const TensorT<T>&);                                        \
    template TensorT<T> downsample2x(const TensorT<T>&);                                               \
    template TensorT<T> resize_bilinear(const TensorT<T>&, int, int);                                  \
    template TensorT<T> masked_fill(const TensorT<T>&, const BoolMask&, T);                            \
    template TensorT<T> masked_select(const TensorT<T>&, const BoolMask&);                             \
    template TensorT<T> channel_affine(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);

CNSNET_INSTANTIATE_OPS(float)
CNSNET_INSTANTIATE_OPS(double)

#undef CNSNET_INSTANTIATE_OPS

}  // namespace cnsnet
