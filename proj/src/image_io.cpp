#include "cnsnet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include <png.h>

#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8)) {
        throw std::runtime_error(path + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng error while reading " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    ImageU8 img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error(path + ": unsupported channel count " + std::to_string(img.channels));
    }
    img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y) rows[static_cast<size_t>(y)] = img.pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw std::invalid_argument("write_png: unsupported channel count " + std::to_string(img.channels));
    }
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot create " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng error while writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y) {
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(img.pixels.data() + y * stride);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor image_to_tensor(const ImageU8& img) {
    Tensor t = Tensor::uninit({img.channels, img.height, img.width});
    const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
    float* d = t.data();
    for (std::int64_t i = 0; i < plane; ++i)
        for (int c = 0; c < img.channels; ++c)
            d[c * plane + i] = static_cast<float>(img.pixels[static_cast<size_t>(i) * img.channels +
                                                             static_cast<size_t>(c)]) /
                               255.0f;
    return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
        throw std::invalid_argument("tensor_to_image: expected [1|3,H,W], got " + shape_str(t.shape()));
    }
    ImageU8 img;
    img.channels = t.dim(0);
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
    const float* d = t.data();
    for (std::int64_t i = 0; i < plane; ++i)
        for (int c = 0; c < img.channels; ++c) {
            const float v = std::clamp(d[c * plane + i], 0.0f, 1.0f);
            img.pixels[static_cast<size_t>(i) * img.channels + static_cast<size_t>(c)] =
                static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return img;
}

Tensor load_image(const std::string& path, int want_channels) {
    ImageU8 img = read_png(path);
    Tensor t = image_to_tensor(img);
    if (img.channels == want_channels) return t;
    if (want_channels == 3 && img.channels == 1) {
        Tensor out = Tensor::uninit({3, img.height, img.width});
        const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
        for (int c = 0; c < 3; ++c)
            std::copy(t.data(), t.data() + plane, out.data() + c * plane);
        return out;
    }
    if (want_channels == 1 && img.channels == 3) {
        Tensor out = Tensor::uninit({1, img.height, img.width});
        const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
        const float* d = t.data();
        for (std::int64_t i = 0; i < plane; ++i)
            out.data()[i] = (d[i] + d[plane + i] + d[2 * plane + i]) / 3.0f;
        return out;
    }
    throw std::invalid_argument("load_image: cannot convert " + std::to_string(img.channels) + " to " +
                                std::to_string(want_channels) + " channels");
}

void save_image(const std::string& path, const Tensor& t) {
    write_png(path, tensor_to_image(t));
}

Tensor load_mask(const std::string& path) {
    Tensor gray = load_image(path, 1);
    const int h = gray.dim(1), w = gray.dim(2);
    Tensor mask = Tensor::uninit({h, w});
    const float thr = 128.0f / 255.0f;
    for (std::int64_t i = 0; i < mask.numel(); ++i) mask.data()[i] = gray.data()[i] >= thr ? 1.0f : 0.0f;
    return mask;
}

void save_mask(const std::string& path, const Tensor& mask) {
    if (mask.ndim() != 2) throw std::invalid_argument("save_mask: expected [H,W]");
    save_image(path, reshape(mask, {1, mask.dim(0), mask.dim(1)}));
}

Tensor quantize8(const Tensor& t) {
    Tensor out = Tensor::uninit(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const float v = std::clamp(t.data()[i], 0.0f, 1.0f);
        out.data()[i] = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
    }
    return out;
}

}  // namespace cnsnet
