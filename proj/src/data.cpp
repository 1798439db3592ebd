#include "cnsnet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "cnsnet/image_io.hpp"

namespace fs = std::filesystem;

namespace cnsnet {

namespace {

struct Ellipse {
    double cy, cx, ry, rx, angle;
    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (c * dx + s * dy) / rx;
        const double v = (-s * dx + c * dy) / ry;
        return u * u + v * v <= 1.0;
    }
};

struct ConvexPoly {
    std::vector<std::pair<double, double>> pts;  // (y,x), counter-clockwise
    bool contains(double y, double x) const {
        const size_t n = pts.size();
        for (size_t i = 0; i < n; ++i) {
            const auto& a = pts[i];
            const auto& b = pts[(i + 1) % n];
            const double cross = (b.second - a.second) * (y - a.first) - (b.first - a.first) * (x - a.second);
            if (cross < 0) return false;
        }
        return true;
    }
};

ConvexPoly random_convex_poly(double cy, double cx, double radius, Rng& rng) {
    const int k = rng.uniform_int(3, 5);
    std::vector<double> angles;
    for (int i = 0; i < k; ++i) angles.push_back(rng.uniform(0.0, 2.0 * 3.14159265358979323846));
    std::sort(angles.begin(), angles.end());
    ConvexPoly poly;
    for (double a : angles) {
        const double r = radius * rng.uniform(0.5, 1.0);
        poly.pts.emplace_back(cy - r * std::sin(a), cx + r * std::cos(a));
    }
    return poly;
}

void separable_gaussian(std::vector<float>& img, int h, int w, double sigma) {
    if (sigma <= 0.05) return;
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<size_t>(i + r)];
    }
    for (auto& v : k) v /= sum;
    std::vector<float> tmp(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) {
                const int xx = std::clamp(x + i, 0, w - 1);
                acc += k[static_cast<size_t>(i + r)] * img[static_cast<size_t>(y) * w + xx];
            }
            tmp[static_cast<size_t>(y) * w + x] = static_cast<float>(acc);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) {
                const int yy = std::clamp(y + i, 0, h - 1);
                acc += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(yy) * w + x];
            }
            img[static_cast<size_t>(y) * w + x] = static_cast<float>(acc);
        }
}

// Background: bilinear corner-color gradient, a few colored shapes, mild noise.
Tensor synth_background(const SynthSpec& spec, Rng& rng) {
    const int n = spec.canvas;
    Tensor img = Tensor::uninit({3, n, n});
    double corners[4][3];
    for (auto& corner : corners)
        for (double& c : corner) c = rng.uniform(0.15, 0.95);
    const std::int64_t plane = static_cast<std::int64_t>(n) * n;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double fy = n > 1 ? static_cast<double>(y) / (n - 1) : 0.0;
            const double fx = n > 1 ? static_cast<double>(x) / (n - 1) : 0.0;
            for (int c = 0; c < 3; ++c) {
                const double top = corners[0][c] + (corners[1][c] - corners[0][c]) * fx;
                const double bot = corners[2][c] + (corners[3][c] - corners[2][c]) * fx;
                img.data()[c * plane + y * n + x] = static_cast<float>(top + (bot - top) * fy);
            }
        }
    const int shapes = rng.uniform_int(spec.bg_shapes_min, spec.bg_shapes_max);
    for (int sidx = 0; sidx < shapes; ++sidx) {
        Ellipse e{rng.uniform(0.1, 0.9) * n, rng.uniform(0.1, 0.9) * n, rng.uniform(0.08, 0.3) * n,
                  rng.uniform(0.08, 0.3) * n, rng.uniform(0.0, 3.14159265)};
        double color[3];
        for (double& c : color) c = rng.uniform(0.1, 0.95);
        const double alpha = rng.uniform(0.6, 1.0);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                if (!e.contains(y + 0.5, x + 0.5)) continue;
                for (int c = 0; c < 3; ++c) {
                    float& px = img.data()[c * plane + y * n + x];
                    px = static_cast<float>((1.0 - alpha) * px + alpha * color[c]);
                }
            }
    }
    for (std::int64_t i = 0; i < img.numel(); ++i) {
        const double noisy = img.data()[i] + spec.noise_amp * rng.uniform(-1.0, 1.0);
        img.data()[i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
    return img;
}

std::vector<float> synth_shadow_region(const SynthSpec& spec, Rng& rng) {
    const int n = spec.canvas;
    std::vector<float> region(static_cast<size_t>(n) * n, 0.0f);
    const int shapes = rng.uniform_int(spec.shadow_shapes_min, spec.shadow_shapes_max);
    for (int sidx = 0; sidx < shapes; ++sidx) {
        if (rng.uniform() < 0.5) {
            Ellipse e{rng.uniform(0.2, 0.8) * n, rng.uniform(0.2, 0.8) * n, rng.uniform(0.12, 0.35) * n,
                      rng.uniform(0.12, 0.35) * n, rng.uniform(0.0, 3.14159265)};
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    if (e.contains(y + 0.5, x + 0.5)) region[static_cast<size_t>(y) * n + x] = 1.0f;
        } else {
            ConvexPoly p = random_convex_poly(rng.uniform(0.25, 0.75) * n, rng.uniform(0.25, 0.75) * n,
                                              rng.uniform(0.15, 0.4) * n, rng);
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    if (p.contains(y + 0.5, x + 0.5)) region[static_cast<size_t>(y) * n + x] = 1.0f;
        }
    }
    return region;
}

}  // namespace

ImageTriplet synth_triplet(const SynthSpec& spec, std::uint64_t seed) {
    const int n = spec.canvas;
    const std::int64_t plane = static_cast<std::int64_t>(n) * n;
    // Deterministic retry loop: reject degenerate masks (all shadow /
    // no shadow after thresholding) by reseeding from the attempt index.
    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(seed * 0x9E3779B97F4A7C15ull + attempt * 0xBF58476D1CE4E5B9ull + 1);
        Tensor free = synth_background(spec, rng);
        std::vector<float> soft = synth_shadow_region(spec, rng);
        const double sigma = rng.uniform(spec.blur_lo, spec.blur_hi);
        separable_gaussian(soft, n, n, sigma);

        std::int64_t above = 0;
        for (float v : soft)
            if (v > 0.5f) ++above;
        if (above < plane / 32 || above > plane * 7 / 8) continue;

        double atten[3];
        for (double& a : atten) a = rng.uniform(spec.atten_lo, spec.atten_hi);

        ImageTriplet t;
        t.shadow_free = free;
        t.shadow = Tensor::uninit({3, n, n});
        t.mask = Tensor::uninit({n, n});
        for (std::int64_t i = 0; i < plane; ++i) {
            t.mask.data()[i] = soft[static_cast<size_t>(i)] > 0.5f ? 1.0f : 0.0f;
            for (int c = 0; c < 3; ++c) {
                const double factor = 1.0 - (1.0 - atten[c]) * soft[static_cast<size_t>(i)];
                t.shadow.data()[c * plane + i] = static_cast<float>(free.data()[c * plane + i] * factor);
            }
        }
        t.id = "synth-" + std::to_string(seed);
        return t;
    }
}

ImageTriplet SyntheticSource::get(int index) const {
    if (index < 0 || index >= count_) throw std::out_of_range("SyntheticSource: index " + std::to_string(index));
    return synth_triplet(spec_, base_seed_ + static_cast<std::uint64_t>(index));
}

namespace {

std::map<std::string, std::string> list_stems(const fs::path& dir) {
    std::map<std::string, std::string> out;  // stem -> full path, lexicographic
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const fs::path p = entry.path();
        if (p.extension() != ".png" && p.extension() != ".PNG") continue;
        out[p.stem().string()] = p.string();
    }
    return out;
}

}  // namespace

std::vector<TripletPaths> scan_istd(const std::string& root, const std::string& split,
                                    std::vector<std::string>* warnings) {
    const fs::path r(root);
    if (!fs::exists(r)) throw std::runtime_error("dataset root '" + root + "' does not exist");

    std::vector<std::array<fs::path, 3>> layouts = {
        {r / (split + "_A"), r / (split + "_B"), r / (split + "_C")},
        {r / split / (split + "_A"), r / split / (split + "_B"), r / split / (split + "_C")},
        {r / split / "shadow", r / split / "mask", r / split / "free"},
    };
    const std::array<fs::path, 3>* found = nullptr;
    for (const auto& l : layouts) {
        if (fs::is_directory(l[0]) && fs::is_directory(l[1]) && fs::is_directory(l[2])) {
            found = &l;
            break;
        }
    }
    if (!found) {
        throw std::runtime_error("no ISTD-style layout under '" + root + "' for split '" + split +
                                 "' (expected " + split + "_A/_B/_C, " + split + "/" + split +
                                 "_A/_B/_C, or " + split + "/shadow|mask|free)");
    }
    auto shadows = list_stems((*found)[0]);
    auto masks = list_stems((*found)[1]);
    auto frees = list_stems((*found)[2]);

    std::vector<TripletPaths> out;
    for (const auto& [stem, path] : shadows) {
        const auto mi = masks.find(stem);
        const auto fi = frees.find(stem);
        if (mi == masks.end() || fi == frees.end()) {
            if (warnings) {
                warnings->push_back("skipping '" + stem + "': missing " +
                                    (mi == masks.end() ? "mask" : "shadow-free") + " counterpart");
            }
            continue;
        }
        out.push_back({stem, path, mi->second, fi->second});
    }
    if (warnings) {
        for (const auto& [stem, path] : masks)
            if (!shadows.count(stem)) warnings->push_back("skipping mask-only file '" + stem + "'");
        for (const auto& [stem, path] : frees)
            if (!shadows.count(stem)) warnings->push_back("skipping free-only file '" + stem + "'");
    }
    return out;  // std::map iteration is already lexicographic by id
}

ImageTriplet load_triplet(const TripletPaths& paths) {
    ImageTriplet t;
    t.id = paths.id;
    t.shadow = load_image(paths.shadow, 3);
    t.mask = load_mask(paths.mask);
    t.shadow_free = load_image(paths.shadow_free, 3);
    if (t.shadow.dim(1) != t.mask.dim(0) || t.shadow.dim(2) != t.mask.dim(1) ||
        t.shadow.shape() != t.shadow_free.shape()) {
        throw std::runtime_error("triplet '" + paths.id + "' components are not aligned");
    }
    return t;
}

namespace {

Tensor rot90_once(const Tensor& t) {
    const bool has_c = t.ndim() == 3;
    const int c = has_c ? t.dim(0) : 1;
    const int h = has_c ? t.dim(1) : t.dim(0);
    const int w = has_c ? t.dim(2) : t.dim(1);
    Tensor out = has_c ? Tensor::uninit({c, w, h}) : Tensor::uninit({w, h});
    const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t out_plane = in_plane;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                // counter-clockwise: (y,x) -> (w-1-x, y)
                out.data()[ch * out_plane + (w - 1 - x) * h + y] = t.data()[ch * in_plane + y * w + x];
            }
    return out;
}

}  // namespace

Tensor rot90(const Tensor& t, int quarter_turns) {
    Tensor cur = t.detach_copy();
    const int k = ((quarter_turns % 4) + 4) % 4;
    for (int i = 0; i < k; ++i) cur = rot90_once(cur);
    return cur;
}

Tensor flip_h(const Tensor& t) {
    const bool has_c = t.ndim() == 3;
    const int c = has_c ? t.dim(0) : 1;
    const int h = has_c ? t.dim(1) : t.dim(0);
    const int w = has_c ? t.dim(2) : t.dim(1);
    Tensor out = Tensor::uninit(t.shape());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.data()[ch * plane + y * w + (w - 1 - x)] = t.data()[ch * plane + y * w + x];
    return out;
}

Tensor flip_v(const Tensor& t) {
    const bool has_c = t.ndim() == 3;
    const int c = has_c ? t.dim(0) : 1;
    const int h = has_c ? t.dim(1) : t.dim(0);
    const int w = has_c ? t.dim(2) : t.dim(1);
    Tensor out = Tensor::uninit(t.shape());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.data()[ch * plane + (h - 1 - y) * w + x] = t.data()[ch * plane + y * w + x];
    return out;
}

Tensor crop(const Tensor& t, int y0, int x0, int h, int w) {
    const bool has_c = t.ndim() == 3;
    const int c = has_c ? t.dim(0) : 1;
    const int ih = has_c ? t.dim(1) : t.dim(0);
    const int iw = has_c ? t.dim(2) : t.dim(1);
    if (y0 < 0 || x0 < 0 || y0 + h > ih || x0 + w > iw) {
        throw std::invalid_argument("crop window exceeds image bounds");
    }
    Tensor out = has_c ? Tensor::uninit({c, h, w}) : Tensor::uninit({h, w});
    const std::int64_t in_plane = static_cast<std::int64_t>(ih) * iw;
    const std::int64_t out_plane = static_cast<std::int64_t>(h) * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.data()[ch * out_plane + y * w + x] = t.data()[ch * in_plane + (y0 + y) * iw + (x0 + x)];
    return out;
}

ImageTriplet augment(const ImageTriplet& t, int patch, Rng& rng) {
    const int h = t.shadow.dim(1), w = t.shadow.dim(2);
    if (patch > h || patch > w) {
        throw std::invalid_argument("augment: patch " + std::to_string(patch) + " exceeds image " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    const int quarter = rng.uniform_int(0, 3);
    const bool hflip = rng.uniform() < 0.5;
    const bool vflip = rng.uniform() < 0.5;

    auto apply = [&](const Tensor& img) {
        Tensor cur = rot90(img, quarter);
        if (hflip) cur = flip_h(cur);
        if (vflip) cur = flip_v(cur);
        return cur;
    };
    ImageTriplet out;
    out.id = t.id;
    out.shadow = apply(t.shadow);
    out.mask = apply(t.mask);
    out.shadow_free = apply(t.shadow_free);

    const int ah = out.shadow.dim(1), aw = out.shadow.dim(2);
    const int y0 = ah > patch ? rng.uniform_int(0, ah - patch) : 0;
    const int x0 = aw > patch ? rng.uniform_int(0, aw - patch) : 0;
    if (ah != patch || aw != patch) {
        out.shadow = crop(out.shadow, y0, x0, patch, patch);
        out.mask = crop(out.mask, y0, x0, patch, patch);
        out.shadow_free = crop(out.shadow_free, y0, x0, patch, patch);
    }
    return out;
}

void write_triplets(const std::string& dir, const std::string& split, const TripletSource& src) {
    const fs::path root(dir);
    const fs::path a = root / (split + "_A"), b = root / (split + "_B"), c = root / (split + "_C");
    fs::create_directories(a);
    fs::create_directories(b);
    fs::create_directories(c);
    for (int i = 0; i < src.size(); ++i) {
        ImageTriplet t = src.get(i);
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.png", i);
        save_image((a / name).string(), t.shadow);
        save_mask((b / name).string(), t.mask);
        save_image((c / name).string(), t.shadow_free);
    }
}

}  // namespace cnsnet
