#pragma once

#include <string>
#include <vector>

#include "cnsnet/model.hpp"
#include "cnsnet/optim.hpp"

namespace cnsnet {

// Flat "key = value" text document. Serialization is canonical (sorted
// keys, lossless number formatting), so parse/serialize round-trips
// exactly.
class KvDoc {
public:
    static KvDoc parse(const std::string& text);
    static KvDoc load_file(const std::string& path);
    std::string serialize() const;
    void save_file(const std::string& path) const;

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);
    void set_int(const std::string& key, long long v);
    void set_double(const std::string& key, double v);
    void set_bool(const std::string& key, bool v);

    std::string get(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

private:
    std::vector<std::pair<std::string, std::string>> items_;
};

struct SynthSpec {
    int canvas = 64;
    int bg_shapes_min = 2;
    int bg_shapes_max = 5;
    int shadow_shapes_min = 1;
    int shadow_shapes_max = 3;
    double atten_lo = 0.2;
    double atten_hi = 0.6;
    double blur_lo = 0.5;
    double blur_hi = 2.5;
    double noise_amp = 0.02;
};

struct TrainOptions {
    int batch = 4;
    int patch = 64;
    int max_steps = 2000;
    int max_epochs = 200;
    unsigned long long seed = 1;
    std::string checkpoint_path = "cnsnet.ckpt";
    int log_every = 25;
    bool paper_scale = false;  // batch 8, patch 256

    void apply_paper_scale();
};

KvDoc to_kv(const ModelConfig& m, const AdamConfig& a, const SynthSpec& s, const TrainOptions& t);
void from_kv(const KvDoc& doc, ModelConfig& m, AdamConfig& a, SynthSpec& s, TrainOptions& t);

}  // namespace cnsnet
