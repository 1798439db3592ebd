#include "cnsnet/evaluator.hpp"

#include <ostream>
#include <stdexcept>

#include "cnsnet/image_io.hpp"
#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

MetricReport evaluate_source(const CnsNet* model, const TripletSource& src, const EvalOptions& opts,
                             std::ostream* progress) {
    if (!opts.identity && !model) {
        throw std::invalid_argument("evaluate_source: need a model unless running --identity");
    }
    if (src.size() == 0) throw std::runtime_error("evaluate_source: dataset is empty");
    const int n = opts.limit > 0 ? std::min(opts.limit, src.size()) : src.size();

    NoGradGuard ng;
    MetricAccumulator acc;
    for (int i = 0; i < n; ++i) {
        ImageTriplet t = src.get(i);
        Tensor pred;
        if (opts.identity) {
            pred = t.shadow;
        } else {
            pred = infer_padded(*model, t.shadow, t.mask).image;
        }
        if (opts.quantize) pred = quantize8(pred);
        acc.add_image(pred, t.shadow_free, t.mask);
        if (progress && ((i + 1) % 50 == 0 || i + 1 == n)) {
            (*progress) << "  evaluated " << (i + 1) << "/" << n << " images\r" << std::flush;
        }
    }
    if (progress) (*progress) << "\n";
    return acc.report();
}

InferResult infer_padded(const CnsNet& model, const Tensor& shadow, const Tensor& hard_mask) {
    if (shadow.ndim() != 3 || shadow.dim(0) != 3 || hard_mask.ndim() != 2) {
        throw std::invalid_argument("infer: expected shadow [3,H,W] and mask [H,W]");
    }
    const int h = shadow.dim(1), w = shadow.dim(2);
    const int div = 1 << model.config().scales;
    const int ph = (h + div - 1) / div * div;
    const int pw = (w + div - 1) / div * div;

    NoGradGuard ng;
    Tensor s = shadow, m = hard_mask;
    if (ph != h || pw != w) {
        // edge-replicate pad on bottom/right
        Tensor sp = Tensor::uninit({3, ph, pw});
        Tensor mp = Tensor::uninit({ph, pw});
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        const std::int64_t pplane = static_cast<std::int64_t>(ph) * pw;
        for (int y = 0; y < ph; ++y) {
            const int sy = std::min(y, h - 1);
            for (int x = 0; x < pw; ++x) {
                const int sx = std::min(x, w - 1);
                for (int c = 0; c < 3; ++c)
                    sp.data()[c * pplane + static_cast<std::int64_t>(y) * pw + x] =
                        shadow.data()[c * plane + static_cast<std::int64_t>(sy) * w + sx];
                mp.data()[static_cast<std::int64_t>(y) * pw + x] =
                    hard_mask.data()[static_cast<std::int64_t>(sy) * w + sx];
            }
        }
        s = sp;
        m = mp;
    }
    auto out = model.forward_single(s, m);
    InferResult res;
    res.image = (ph != h || pw != w) ? crop(out.image, 0, 0, h, w) : out.image;
    res.soft_mask = (ph != h || pw != w) ? crop(out.soft_mask, 0, 0, h, w) : out.soft_mask;
    return res;
}

}  // namespace cnsnet
