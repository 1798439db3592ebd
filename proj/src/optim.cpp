#include "cnsnet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cnsnet {

template <typename T>
AdamT<T>::AdamT(ParamMap<T>* params, const AdamConfig& cfg) : params_(params), cfg_(cfg), lr_(cfg.lr) {
    for (const auto& [name, t] : params_->items) {
        m_.push_back(TensorT<T>::zeros(t.shape()));
        v_.push_back(TensorT<T>::zeros(t.shape()));
    }
}

template <typename T>
void AdamT<T>::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t p = 0; p < params_->items.size(); ++p) {
        auto& [name, t] = params_->items[p];
        if (!t.requires_grad()) continue;
        if (t.grad().empty()) continue;  // parameter unused by this graph
        T* w = t.data();
        const T* g = t.grad().data();
        T* m = m_[p].data();
        T* v = v_[p].data();
        const std::int64_t n = t.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(static_cast<double>(g[i]))) {
                throw std::runtime_error("adam: non-finite gradient in parameter '" + name + "' at index " +
                                         std::to_string(i));
            }
            m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
            v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * static_cast<double>(g[i]) * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] = static_cast<T>(w[i] - lr_ * mhat / (std::sqrt(vhat) + cfg_.epsilon));
        }
    }
}

template <typename T>
void AdamT<T>::zero_grad() {
    for (auto& [name, t] : params_->items) t.zero_grad();
}

template <typename T>
void AdamT<T>::save_state(TensorArchive& arch, const std::string& prefix) const {
    arch.add(prefix + ".step", Tensor64::from_data({1}, {static_cast<double>(step_count_)}));
    arch.add(prefix + ".lr", Tensor64::from_data({1}, {lr_}));
    for (size_t p = 0; p < params_->items.size(); ++p) {
        arch.add(prefix + ".m." + params_->items[p].first, m_[p]);
        arch.add(prefix + ".v." + params_->items[p].first, v_[p]);
    }
}

template <typename T>
void AdamT<T>::load_state(const TensorArchive& arch, const std::string& prefix) {
    step_count_ = static_cast<std::int64_t>(arch.get_f64(prefix + ".step").item());
    lr_ = arch.get_f64(prefix + ".lr").item();
    for (size_t p = 0; p < params_->items.size(); ++p) {
        const std::string& name = params_->items[p].first;
        TensorT<T> m, v;
        if constexpr (std::is_same_v<T, float>) {
            m = arch.get_f32(prefix + ".m." + name);
            v = arch.get_f32(prefix + ".v." + name);
        } else {
            m = arch.get_f64(prefix + ".m." + name);
            v = arch.get_f64(prefix + ".v." + name);
        }
        if (m.shape() != m_[p].shape()) {
            throw std::runtime_error("adam state shape mismatch for '" + name + "'");
        }
        m_[p] = m;
        v_[p] = v;
    }
}

template class AdamT<float>;
template class AdamT<double>;

}  // namespace cnsnet
