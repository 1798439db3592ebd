#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cnsnet/config.hpp"
#include "cnsnet/rng.hpp"
#include "cnsnet/tensor.hpp"

namespace cnsnet {

struct ImageTriplet {
    Tensor shadow;       // [3,H,W] in [0,1]
    Tensor mask;         // [H,W] binary
    Tensor shadow_free;  // [3,H,W] in [0,1]
    std::string id;
};

// Deterministic procedural triplet: gradient+shapes background, a blurred
// convex shadow region, multiplicative per-channel attenuation.
ImageTriplet synth_triplet(const SynthSpec& spec, std::uint64_t seed);

struct TripletPaths {
    std::string id, shadow, mask, shadow_free;
};

// Scans an ISTD-layout dataset root: either <root>/<split>_A|_B|_C,
// <root>/<split>/<split>_A|_B|_C, or <root>/<split>/shadow|mask|free.
// Unmatched files are reported in `warnings` and skipped.
std::vector<TripletPaths> scan_istd(const std::string& root, const std::string& split,
                                    std::vector<std::string>* warnings = nullptr);

ImageTriplet load_triplet(const TripletPaths& paths);

// Identical geometric transform on all three components: optional 90-degree
// rotations, horizontal/vertical flips, and a random crop to patch x patch.
ImageTriplet augment(const ImageTriplet& t, int patch, Rng& rng);

// Geometric helpers (exact, shared by images and masks).
Tensor rot90(const Tensor& t, int quarter_turns);  // [C,H,W] or [H,W]
Tensor flip_h(const Tensor& t);
Tensor flip_v(const Tensor& t);
Tensor crop(const Tensor& t, int y0, int x0, int h, int w);

// Uniform access for the trainer/evaluator; items are addressed by index
// and loading is deterministic.
class TripletSource {
public:
    virtual ~TripletSource() = default;
    virtual int size() const = 0;
    virtual ImageTriplet get(int index) const = 0;
};

class SyntheticSource final : public TripletSource {
public:
    SyntheticSource(const SynthSpec& spec, std::uint64_t base_seed, int count)
        : spec_(spec), base_seed_(base_seed), count_(count) {}
    int size() const override { return count_; }
    ImageTriplet get(int index) const override;

private:
    SynthSpec spec_;
    std::uint64_t base_seed_;
    int count_;
};

class DiskSource final : public TripletSource {
public:
    explicit DiskSource(std::vector<TripletPaths> items) : items_(std::move(items)) {}
    int size() const override { return static_cast<int>(items_.size()); }
    ImageTriplet get(int index) const override { return load_triplet(items_.at(static_cast<size_t>(index))); }

private:
    std::vector<TripletPaths> items_;
};

// Materializes triplets to disk in the canonical <split>_A/_B/_C layout.
void write_triplets(const std::string& dir, const std::string& split, const TripletSource& src);

}  // namespace cnsnet
