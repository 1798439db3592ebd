#include "cnsnet/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cnsnet {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

KvDoc KvDoc::parse(const std::string& text) {
    KvDoc doc;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(lineno) + " has no '=': " + t);
        }
        doc.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return doc;
}

KvDoc KvDoc::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text);
}

std::string KvDoc::serialize() const {
    auto sorted = items_;
    std::sort(sorted.begin(), sorted.end());
    std::string out;
    for (const auto& [k, v] : sorted) out += k + " = " + v + "\n";
    return out;
}

void KvDoc::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot create config " + path);
    out << serialize();
}

bool KvDoc::has(const std::string& key) const {
    for (const auto& [k, v] : items_)
        if (k == key) return true;
    return false;
}

void KvDoc::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    items_.emplace_back(key, value);
}

void KvDoc::set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
void KvDoc::set_double(const std::string& key, double v) { set(key, fmt_double(v)); }
void KvDoc::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

std::string KvDoc::get(const std::string& key, const std::string& fallback) const {
    for (const auto& [k, v] : items_)
        if (k == key) return v;
    return fallback;
}

long long KvDoc::get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    return std::stoll(get(key, ""));
}

double KvDoc::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return std::stod(get(key, ""));
}

bool KvDoc::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get(key, "");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config key '" + key + "' is not a boolean: " + v);
}

void TrainOptions::apply_paper_scale() {
    batch = 8;
    patch = 256;
    paper_scale = true;
}

namespace {

std::string variant_name(SoanVariant v) {
    switch (v) {
        case SoanVariant::Regional: return "regional";
        case SoanVariant::BatchNorm: return "bn";
        case SoanVariant::InstanceNorm: return "in";
    }
    return "regional";
}

SoanVariant variant_from(const std::string& s) {
    if (s == "regional") return SoanVariant::Regional;
    if (s == "bn") return SoanVariant::BatchNorm;
    if (s == "in") return SoanVariant::InstanceNorm;
    throw std::runtime_error("unknown soan variant '" + s + "'");
}

}  // namespace

KvDoc to_kv(const ModelConfig& m, const AdamConfig& a, const SynthSpec& s, const TrainOptions& t) {
    KvDoc d;
    d.set_int("model.base_width", m.base_width);
    d.set_int("model.scales", m.scales);
    d.set_int("model.input_size", m.input_size);
    d.set_int("model.predictor_width", m.predictor_width);
    d.set_bool("model.enable_soan", m.enable_soan);
    d.set_bool("model.enable_saat", m.enable_saat);
    d.set("model.soan_variant", variant_name(m.soan.variant));
    d.set_double("model.soan_epsilon", m.soan.epsilon);
    d.set_int("model.saat_heads", m.saat_heads);
    d.set_int("model.saat_layers", m.saat_layers);
    d.set("model.saat_mask_mode", m.saat_mask_mode == SaatMaskMode::Soft ? "soft" : "hard");
    d.set_int("model.saat_ffn_expansion", m.saat_ffn_expansion);
    d.set_double("model.lambda_rem", m.lambda_rem);
    d.set_double("model.lambda_soft", m.lambda_soft);
    d.set_double("model.lambda_per", m.lambda_per);
    d.set_double("model.lambda_grad", m.lambda_grad);
    d.set_int("model.grad_dilate_radius", m.grad_dilate_radius);
    d.set_int("model.init_seed", static_cast<long long>(m.init_seed));

    d.set_double("adam.lr", a.lr);
    d.set_double("adam.beta1", a.beta1);
    d.set_double("adam.beta2", a.beta2);
    d.set_double("adam.epsilon", a.epsilon);
    d.set_int("adam.plateau_epochs", a.plateau_epochs);
    d.set_double("adam.decay_factor", a.decay_factor);

    d.set_int("synth.canvas", s.canvas);
    d.set_int("synth.bg_shapes_min", s.bg_shapes_min);
    d.set_int("synth.bg_shapes_max", s.bg_shapes_max);
    d.set_int("synth.shadow_shapes_min", s.shadow_shapes_min);
    d.set_int("synth.shadow_shapes_max", s.shadow_shapes_max);
    d.set_double("synth.atten_lo", s.atten_lo);
    d.set_double("synth.atten_hi", s.atten_hi);
    d.set_double("synth.blur_lo", s.blur_lo);
    d.set_double("synth.blur_hi", s.blur_hi);
    d.set_double("synth.noise_amp", s.noise_amp);

    d.set_int("train.batch", t.batch);
    d.set_int("train.patch", t.patch);
    d.set_int("train.max_steps", t.max_steps);
    d.set_int("train.max_epochs", t.max_epochs);
    d.set_int("train.seed", static_cast<long long>(t.seed));
    d.set("train.checkpoint_path", t.checkpoint_path);
    d.set_int("train.log_every", t.log_every);
    d.set_bool("train.paper_scale", t.paper_scale);
    return d;
}

void from_kv(const KvDoc& d, ModelConfig& m, AdamConfig& a, SynthSpec& s, TrainOptions& t) {
    m.base_width = static_cast<int>(d.get_int("model.base_width", m.base_width));
    m.scales = static_cast<int>(d.get_int("model.scales", m.scales));
    m.input_size = static_cast<int>(d.get_int("model.input_size", m.input_size));
    m.predictor_width = static_cast<int>(d.get_int("model.predictor_width", m.predictor_width));
    m.enable_soan = d.get_bool("model.enable_soan", m.enable_soan);
    m.enable_saat = d.get_bool("model.enable_saat", m.enable_saat);
    m.soan.variant = variant_from(d.get("model.soan_variant", variant_name(m.soan.variant)));
    m.soan.epsilon = d.get_double("model.soan_epsilon", m.soan.epsilon);
    m.saat_heads = static_cast<int>(d.get_int("model.saat_heads", m.saat_heads));
    m.saat_layers = static_cast<int>(d.get_int("model.saat_layers", m.saat_layers));
    m.saat_mask_mode =
        d.get("model.saat_mask_mode", "soft") == "hard" ? SaatMaskMode::Hard : SaatMaskMode::Soft;
    m.saat_ffn_expansion = static_cast<int>(d.get_int("model.saat_ffn_expansion", m.saat_ffn_expansion));
    m.lambda_rem = d.get_double("model.lambda_rem", m.lambda_rem);
    m.lambda_soft = d.get_double("model.lambda_soft", m.lambda_soft);
    m.lambda_per = d.get_double("model.lambda_per", m.lambda_per);
    m.lambda_grad = d.get_double("model.lambda_grad", m.lambda_grad);
    m.grad_dilate_radius = static_cast<int>(d.get_int("model.grad_dilate_radius", m.grad_dilate_radius));
    m.init_seed = static_cast<unsigned long long>(d.get_int("model.init_seed", static_cast<long long>(m.init_seed)));

    a.lr = d.get_double("adam.lr", a.lr);
    a.beta1 = d.get_double("adam.beta1", a.beta1);
    a.beta2 = d.get_double("adam.beta2", a.beta2);
    a.epsilon = d.get_double("adam.epsilon", a.epsilon);
    a.plateau_epochs = static_cast<int>(d.get_int("adam.plateau_epochs", a.plateau_epochs));
    a.decay_factor = d.get_double("adam.decay_factor", a.decay_factor);

    s.canvas = static_cast<int>(d.get_int("synth.canvas", s.canvas));
    s.bg_shapes_min = static_cast<int>(d.get_int("synth.bg_shapes_min", s.bg_shapes_min));
    s.bg_shapes_max = static_cast<int>(d.get_int("synth.bg_shapes_max", s.bg_shapes_max));
    s.shadow_shapes_min = static_cast<int>(d.get_int("synth.shadow_shapes_min", s.shadow_shapes_min));
    s.shadow_shapes_max = static_cast<int>(d.get_int("synth.shadow_shapes_max", s.shadow_shapes_max));
    s.atten_lo = d.get_double("synth.atten_lo", s.atten_lo);
    s.atten_hi = d.get_double("synth.atten_hi", s.atten_hi);
    s.blur_lo = d.get_double("synth.blur_lo", s.blur_lo);
    s.blur_hi = d.get_double("synth.blur_hi", s.blur_hi);
    s.noise_amp = d.get_double("synth.noise_amp", s.noise_amp);

    t.batch = static_cast<int>(d.get_int("train.batch", t.batch));
    t.patch = static_cast<int>(d.get_int("train.patch", t.patch));
    t.max_steps = static_cast<int>(d.get_int("train.max_steps", t.max_steps));
    t.max_epochs = static_cast<int>(d.get_int("train.max_epochs", t.max_epochs));
    t.seed = static_cast<unsigned long long>(d.get_int("train.seed", static_cast<long long>(t.seed)));
    t.checkpoint_path = d.get("train.checkpoint_path", t.checkpoint_path);
    t.log_every = static_cast<int>(d.get_int("train.log_every", t.log_every));
    t.paper_scale = d.get_bool("train.paper_scale", t.paper_scale);
}

}  // namespace cnsnet
