#include "cnsnet/saat.hpp"

#include <cmath>
#include <stdexcept>

#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

template <typename T>
std::pair<TokenGridT<T>, TensorT<T>> tokenize(const TensorT<T>& x_hwc, const TensorT<T>& mask_hw) {
    if (x_hwc.ndim() != 3) throw std::invalid_argument("tokenize: expected [h,w,c], got " + shape_str(x_hwc.shape()));
    const int h = x_hwc.dim(0), w = x_hwc.dim(1), c = x_hwc.dim(2);
    if (mask_hw.ndim() != 2 || mask_hw.dim(0) != h || mask_hw.dim(1) != w) {
        throw std::invalid_argument("tokenize: mask " + shape_str(mask_hw.shape()) + " vs grid " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    TokenGridT<T> grid;
    grid.tokens = reshape(x_hwc, {h * w, c});
    grid.h = h;
    grid.w = w;
    TensorT<T> mt = reshape(mask_hw, {h * w, 1});
    return {grid, mt};
}

template <typename T>
TensorT<T> detokenize(const TokenGridT<T>& grid, int channels) {
    return reshape(grid.tokens, {grid.h, grid.w, channels});
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> add_positional(const TensorT<T>& tokens, const TensorT<T>& mask_tokens,
                                                 const TensorT<T>& pe) {
    if (tokens.shape() != pe.shape()) {
        throw std::invalid_argument("add_positional: tokens " + shape_str(tokens.shape()) +
                                    " vs positional table " + shape_str(pe.shape()) +
                                    " (grid size is fixed at build time)");
    }
    if (mask_tokens.ndim() != 2 || mask_tokens.dim(0) != tokens.dim(0)) {
        throw std::invalid_argument("add_positional: mask tokens " + shape_str(mask_tokens.shape()));
    }
    TensorT<T> m = mask_tokens;
    if (m.dim(1) == 1) m = expand(m, tokens.shape());
    return {add(tokens, pe), add(m, pe)};
}

template <typename T>
AttentionWeightsT<T>::AttentionWeightsT(int channels, Rng& rng)
    : q(channels, channels, rng, false),
      k(channels, channels, rng, false),
      v(channels, channels, rng, false),
      proj(channels, channels, rng, false) {}

template <typename T>
void AttentionWeightsT<T>::collect(const std::string& prefix, ParamMap<T>& out) {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    proj.collect(prefix + ".proj", out);
}

template <typename T>
TensorT<T> masked_attention(const TensorT<T>& tokens, const TensorT<T>& mask_tokens,
                            const AttentionWeightsT<T>& w, int heads, int channels) {
    if (tokens.ndim() != 2 || tokens.dim(1) != channels) {
        throw std::invalid_argument("masked_attention: tokens must be [n," + std::to_string(channels) +
                                    "], got " + shape_str(tokens.shape()));
    }
    if (mask_tokens.shape() != tokens.shape()) {
        throw std::invalid_argument("masked_attention: mask tokens " + shape_str(mask_tokens.shape()) +
                                    " vs tokens " + shape_str(tokens.shape()));
    }
    if (channels % heads != 0) throw std::invalid_argument("masked_attention: channels not divisible by heads");
    const int dh = channels / heads;
    const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(channels)));

    TensorT<T> q = w.q.forward(tokens);
    TensorT<T> k = w.k.forward(mul(tokens, mask_tokens));
    TensorT<T> v = w.v.forward(tokens);

    std::vector<int> head_sizes(static_cast<size_t>(heads), dh);
    auto qs = split(q, 1, head_sizes);
    auto ks = split(k, 1, head_sizes);
    auto vs = split(v, 1, head_sizes);
    std::vector<TensorT<T>> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int hd = 0; hd < heads; ++hd) {
        TensorT<T> scores = mul_scalar(matmul(qs[hd], transpose2d(ks[hd])), scale);
        TensorT<T> a = softmax(scores, 1);
        outs.push_back(matmul(a, vs[hd]));
    }
    return w.proj.forward(concat(outs, 1));
}

template <typename T>
SaatLayerT<T>::SaatLayerT(int channels_, int heads_, int ffn_expansion, Rng& rng)
    : ln1(channels_),
      ln2(channels_),
      att(channels_, rng),
      ffn1(channels_, channels_ * ffn_expansion, rng),
      ffn2(channels_ * ffn_expansion, channels_, rng),
      heads(heads_),
      channels(channels_) {}

template <typename T>
TensorT<T> SaatLayerT<T>::forward(const TensorT<T>& x, const TensorT<T>& mask_stream) const {
    TensorT<T> a = masked_attention(ln1.forward(x), mask_stream, att, heads, channels);
    TensorT<T> x1 = add(x, a);
    TensorT<T> f = ffn2.forward(lrelu(ffn1.forward(ln2.forward(x1))));
    return add(x1, f);
}

template <typename T>
void SaatLayerT<T>::collect(const std::string& prefix, ParamMap<T>& out) {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    att.collect(prefix + ".att", out);
    ffn1.collect(prefix + ".ffn1", out);
    ffn2.collect(prefix + ".ffn2", out);
}

template <typename T>
SaatBlockT<T>::SaatBlockT(const SaatConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.channels <= 0 || cfg.channels % cfg.heads != 0) {
        throw std::invalid_argument("SaatBlock: channels must be positive and divisible by heads");
    }
    if (cfg.layers < 1) throw std::invalid_argument("SaatBlock: needs at least one layer");
    if (cfg.grid_h <= 0 || cfg.grid_w <= 0) throw std::invalid_argument("SaatBlock: grid size not set");
    const int n = cfg.grid_h * cfg.grid_w;
    pe = TensorT<T>::rand_normal({n, cfg.channels}, T(0), T(0.02), rng);
    pe.set_requires_grad(true);
    for (int l = 0; l < cfg.layers; ++l) {
        layers.emplace_back(cfg.channels, cfg.heads, cfg.ffn_expansion, rng);
    }
}

template <typename T>
TensorT<T> SaatBlockT<T>::forward(const TensorT<T>& x, const TensorT<T>& mask_complement) const {
    if (x.ndim() != 4 || x.dim(1) != cfg_.channels) {
        throw std::invalid_argument("SaatBlock: expected [N," + std::to_string(cfg_.channels) + ",h,w], got " +
                                    shape_str(x.shape()));
    }
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h != cfg_.grid_h || w != cfg_.grid_w) {
        throw std::invalid_argument("SaatBlock: grid " + std::to_string(h) + "x" + std::to_string(w) +
                                    " differs from build-time grid " + std::to_string(cfg_.grid_h) + "x" +
                                    std::to_string(cfg_.grid_w));
    }
    if (mask_complement.ndim() != 4 || mask_complement.dim(0) != n || mask_complement.dim(1) != 1 ||
        mask_complement.dim(2) != h || mask_complement.dim(3) != w) {
        throw std::invalid_argument("SaatBlock: mask must be [N,1,h,w], got " +
                                    shape_str(mask_complement.shape()));
    }
    const int tokens_n = h * w;
    std::vector<TensorT<T>> outs;
    outs.reserve(static_cast<size_t>(n));
    for (int b = 0; b < n; ++b) {
        // [1,C,h,w] -> row-major pixel tokens [n,c]
        TensorT<T> xt = transpose2d(reshape(slice(x, 0, b, 1), {c, tokens_n}));
        TensorT<T> mt = transpose2d(reshape(slice(mask_complement, 0, b, 1), {1, tokens_n}));
        auto [xs, ms] = add_positional(xt, mt, pe);
        for (const auto& layer : layers) xs = layer.forward(xs, ms);
        outs.push_back(reshape(transpose2d(xs), {1, c, h, w}));
    }
    return concat(outs, 0);
}

template <typename T>
void SaatBlockT<T>::collect(const std::string& prefix, ParamMap<T>& out) {
    out.add(prefix + ".pe", pe);
    for (size_t l = 0; l < layers.size(); ++l) {
        layers[l].collect(prefix + ".layer" + std::to_string(l), out);
    }
}

#define CNSNET_INSTANTIATE_SAAT(T)                                                                       \
    template std::pair<TokenGridT<T>, TensorT<T>> tokenize(const TensorT<T>&, const TensorT<T>&);        \
    template TensorT<T> detokenize(const TokenGridT<T>&, int);                                           \
    template std::pair<TensorT<T>, TensorT<T>> add_positional(const TensorT<T>&, const TensorT<T>&,      \
                                                              const TensorT<T>&);                        \
    template struct AttentionWeightsT<T>;                                                                \
    template TensorT<T> masked_attention(const TensorT<T>&, const TensorT<T>&, const AttentionWeightsT<T>&, \
                                         int, int);                                                      \
    template class SaatLayerT<T>;                                                                        \
    template class SaatBlockT<T>;

CNSNET_INSTANTIATE_SAAT(float)
CNSNET_INSTANTIATE_SAAT(double)

#undef CNSNET_INSTANTIATE_SAAT

}  // namespace cnsnet
