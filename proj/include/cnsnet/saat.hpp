#pragma once

#include <string>
#include <vector>

#include "cnsnet/nn.hpp"
#include "cnsnet/tensor.hpp"

namespace cnsnet {

enum class SaatMaskMode { Soft, Hard };

struct SaatConfig {
    int heads = 4;
    int layers = 2;
    int channels = 0;  // token embedding width; divisible by heads
    SaatMaskMode mask_mode = SaatMaskMode::Soft;
    int ffn_expansion = 2;
    int grid_h = 0;  // fixed at model build time
    int grid_w = 0;
};

// Pixel tokens of an [h,w,c] feature grid in row-major order.
template <typename T>
struct TokenGridT {
    TensorT<T> tokens;  // [n,c], n = h*w
    int h = 0;
    int w = 0;
};

// Row-major flatten; mask_tokens come out as [n,1].
template <typename T>
std::pair<TokenGridT<T>, TensorT<T>> tokenize(const TensorT<T>& x_hwc, const TensorT<T>& mask_hw);

template <typename T>
TensorT<T> detokenize(const TokenGridT<T>& grid, int channels);

// x~ = x + pe, m~ = broadcast(m) + pe with a shared positional table [n,c].
template <typename T>
std::pair<TensorT<T>, TensorT<T>> add_positional(const TensorT<T>& tokens, const TensorT<T>& mask_tokens,
                                                 const TensorT<T>& pe);

template <typename T>
struct AttentionWeightsT {
    AttentionWeightsT() = default;
    AttentionWeightsT(int channels, Rng& rng);
    // Projection matrices [c,c], bias-free.
    LinearT<T> q, k, v, proj;
    void collect(const std::string& prefix, ParamMap<T>& out);
};

// Multi-head attention where the key input is the elementwise product of
// the tokens with the mask stream: Q = X Wq, K = (X . M) Wk, V = X Wv,
// A = softmax(Q K^T / sqrt(c)) per head.
template <typename T>
TensorT<T> masked_attention(const TensorT<T>& tokens, const TensorT<T>& mask_tokens,
                            const AttentionWeightsT<T>& w, int heads, int channels);

// Pre-norm transformer layer with the masked attention and a 2x FFN.
template <typename T>
class SaatLayerT {
public:
    SaatLayerT() = default;
    SaatLayerT(int channels, int heads, int ffn_expansion, Rng& rng);

    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& mask_stream) const;
    void collect(const std::string& prefix, ParamMap<T>& out);

    LayerNormT<T> ln1, ln2;
    AttentionWeightsT<T> att;
    LinearT<T> ffn1, ffn2;
    int heads = 4;
    int channels = 0;
};

// The SAAT block: learned positional table shared by the feature and mask
// streams, followed by the cascaded transformer layers. Operates on the
// deepest feature map; the grid size is fixed when the block is built.
template <typename T>
class SaatBlockT {
public:
    SaatBlockT() = default;
    SaatBlockT(const SaatConfig& cfg, Rng& rng);

    // x: [N,C,h,w]; mask_complement: [N,1,h,w] (already 1 - soft mask).
    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& mask_complement) const;
    void collect(const std::string& prefix, ParamMap<T>& out);
    const SaatConfig& config() const { return cfg_; }

    TensorT<T> pe;  // [n,c]
    std::vector<SaatLayerT<T>> layers;

private:
    SaatConfig cfg_;
};

using SaatBlock = SaatBlockT<float>;

}  // namespace cnsnet
