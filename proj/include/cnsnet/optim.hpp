#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnsnet/checkpoint.hpp"
#include "cnsnet/nn.hpp"

namespace cnsnet {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Plateau decay: halve lr when validation RMSE fails to improve
    // for this many epochs.
    int plateau_epochs = 10;
    double decay_factor = 0.5;
};

// Standard Adam with bias correction over a ParamMap. Parameters are
// updated in place; moments persist across checkpoints.
template <typename T>
class AdamT {
public:
    AdamT() = default;
    AdamT(ParamMap<T>* params, const AdamConfig& cfg);

    // Applies one update from the gradients accumulated on the tape.
    // A non-finite gradient aborts with the offending parameter's name.
    void step();
    void zero_grad();

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    std::int64_t step_count() const { return step_count_; }

    void save_state(TensorArchive& arch, const std::string& prefix) const;
    void load_state(const TensorArchive& arch, const std::string& prefix);

private:
    ParamMap<T>* params_ = nullptr;
    AdamConfig cfg_;
    double lr_ = 1e-3;
    std::int64_t step_count_ = 0;
    std::vector<TensorT<T>> m_, v_;
};

using Adam = AdamT<float>;

}  // namespace cnsnet
