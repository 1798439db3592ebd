#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnsnet/tensor.hpp"

namespace cnsnet {

// Interleaved 8-bit image buffer (row-major, 1 or 3 channels).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// [C,H,W] float in [0,1] <-> 8-bit. Quantization rounds to nearest.
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

// Convenience wrappers; want_channels converts on load (1 or 3).
Tensor load_image(const std::string& path, int want_channels);
void save_image(const std::string& path, const Tensor& t);

// Single-channel PNG -> binary [H,W] mask, thresholded at 128.
Tensor load_mask(const std::string& path);
void save_mask(const std::string& path, const Tensor& mask);

// Round-trip through the 8-bit domain (evaluation protocol).
Tensor quantize8(const Tensor& t);

}  // namespace cnsnet
