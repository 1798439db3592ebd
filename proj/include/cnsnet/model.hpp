#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cnsnet/mask_ops.hpp"
#include "cnsnet/nn.hpp"
#include "cnsnet/saat.hpp"
#include "cnsnet/soan.hpp"
#include "cnsnet/tensor.hpp"

namespace cnsnet {

struct ModelConfig {
    int base_width = 32;
    int scales = 4;
    int input_size = 64;  // training patch edge; fixes the SAAT grid
    int predictor_width = 16;
    bool enable_soan = true;
    bool enable_saat = true;
    SoanConfig soan;
    int saat_heads = 4;
    int saat_layers = 2;
    SaatMaskMode saat_mask_mode = SaatMaskMode::Soft;
    int saat_ffn_expansion = 2;
    double lambda_rem = 10.0;
    double lambda_soft = 5.0;
    double lambda_per = 1.0;
    double lambda_grad = 1.0;
    int grad_dilate_radius = 7;
    unsigned long long init_seed = 42;

    // Channel width after each encoder scale (grows 1.5x/2x/3x of base,
    // capped; doubling every scale would blow the parameter budget).
    std::vector<int> scale_widths() const;
};

// Named ablation presets mirroring the structural variants.
ModelConfig apply_ablation(ModelConfig cfg, const std::string& name);

// Frozen random-weight feature pyramid standing in for the pretrained
// perceptual network: five conv stages of increasing depth, stride 2.
// A loader hook accepts external stage weights for fidelity runs.
template <typename T>
class PerceptualExtractorT {
public:
    PerceptualExtractorT() = default;
    explicit PerceptualExtractorT(Rng& rng);

    std::vector<TensorT<T>> stages(const TensorT<T>& x) const;  // x: [N,3,H,W]
    void load_stage_weights(const std::vector<TensorT<T>>& weights, const std::vector<TensorT<T>>& biases);

    static constexpr int kStages = 5;
    static const double kStageWeights[kStages];  // 1/32, 1/16, 1/8, 1/4, 1

    std::vector<Conv2dT<T>> convs;
};

template <typename T>
class CnsNetT {
public:
    explicit CnsNetT(const ModelConfig& cfg);

    struct Output {
        TensorT<T> image;      // [N,3,H,W] in (0,1)
        TensorT<T> soft_mask;  // [N,1,H,W] in (0,1)
    };

    // shadow: [N,3,H,W]; hard_mask: [N,1,H,W] binary. H,W must be
    // multiples of 2^scales. soft_override (tests/diagnostics) replaces
    // the predictor output when defined.
    Output forward(const TensorT<T>& shadow, const TensorT<T>& hard_mask,
                   const TensorT<T>& soft_override = TensorT<T>()) const;

    // Single-image convenience: shadow [3,H,W], mask [H,W].
    Output forward_single(const TensorT<T>& shadow, const TensorT<T>& hard_mask) const;

    ParamMap<T>& parameters() { return params_; }
    std::int64_t param_count() const;
    std::int64_t empty_region_events() const;
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ParamMap<T> params_;
    SoftMaskPredictorT<T> predictor_;
    Conv2dT<T> stem_;
    std::vector<Conv2dT<T>> down_;
    std::vector<std::shared_ptr<SoanBlockT<T>>> enc_soan_, dec_soan_;
    std::shared_ptr<SaatBlockT<T>> saat_;
    std::vector<Conv2dT<T>> up_;
    Conv2dT<T> head_;
};

using CnsNet = CnsNetT<float>;

// ---- losses ----

// Mean absolute error over all pixels and channels.
template <typename T>
TensorT<T> loss_rem(const TensorT<T>& output, const TensorT<T>& gt) {
    return mean_all(abs(sub(output, gt)));
}

// Stage-weighted perceptual distance; each stage term is the RMS of the
// feature difference (exactly zero at identical inputs).
template <typename T>
TensorT<T> loss_per(const TensorT<T>& output, const TensorT<T>& gt, const PerceptualExtractorT<T>& extractor);

// Boundary-aware gradient loss: outside the dilated mask the output's
// Laplacian follows the input, inside it follows the ground truth.
// dilated_mask: [N,1,H,W] or [H,W].
template <typename T>
TensorT<T> loss_grad(const TensorT<T>& output, const TensorT<T>& input, const TensorT<T>& gt,
                     const TensorT<T>& dilated_mask);

struct LossWeights {
    double rem = 10.0, soft = 5.0, per = 1.0, grad = 1.0;
};

template <typename T>
TensorT<T> loss_total(const TensorT<T>& rem, const TensorT<T>& soft, const TensorT<T>& per,
                      const TensorT<T>& grad, const LossWeights& lambda);

// 5-point Laplacian (4p - neighbors) per channel, zero padding.
template <typename T>
TensorT<T> laplacian(const TensorT<T>& x);

}  // namespace cnsnet
