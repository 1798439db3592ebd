#pragma once

#include <iosfwd>
#include <string>

#include "cnsnet/data.hpp"
#include "cnsnet/metrics.hpp"
#include "cnsnet/model.hpp"

namespace cnsnet {

struct EvalOptions {
    bool identity = false;  // score the input shadow image itself
    int limit = 0;          // 0 = all
    bool quantize = true;   // round-trip predictions through 8 bits
};

// Runs the region-wise metric protocol over a dataset split, pooling
// sums over all pixels of the split. `model` may be null when
// opts.identity is set.
MetricReport evaluate_source(const CnsNet* model, const TripletSource& src, const EvalOptions& opts,
                             std::ostream* progress = nullptr);

struct InferResult {
    Tensor image;      // [3,H,W]
    Tensor soft_mask;  // [H,W]
};

// Forward pass with edge-replicate padding to the model's size multiple,
// cropped back to the input size.
InferResult infer_padded(const CnsNet& model, const Tensor& shadow, const Tensor& hard_mask);

}  // namespace cnsnet
