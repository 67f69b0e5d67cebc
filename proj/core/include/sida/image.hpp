#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sida/tensor.hpp"

namespace sida {

// 8-bit interleaved image, row-major. channels is 3 (RGB) or 1 (grayscale).
struct ImageU8 {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    static ImageU8 filled(int height, int width, int channels, std::uint8_t value);
    std::uint8_t& at(int y, int x, int c);
    std::uint8_t at(int y, int x, int c) const;
    bool same_dims(const ImageU8& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

// Real-valued RGB image in [0, 1], H x W x 3 row-major.
struct ImageF {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

ImageF to_float(const ImageU8& img);        // requires 3 channels; scales by 1/255
ImageU8 to_u8(const ImageF& img);           // rounds and clamps

// Binary mask as a [h x w] tensor of {0, 1}. Grayscale input binarized at 128.
Tensor mask_to_tensor(const ImageU8& mask);
ImageU8 tensor_to_mask(const Tensor& mask);  // values >= 0.5 -> 255

// PNG (via libpng) and binary PPM (P6). Format picked by extension on save,
// sniffed by magic on load.
ImageU8 load_image_u8(const std::string& path);
void save_image_u8(const ImageU8& img, const std::string& path);

// Dataset-facing loaders per the manifest contract.
ImageF load_image(const std::string& path);
Tensor load_mask(const std::string& path);

// Base64 without line breaks, for wire payloads.
std::string base64_encode(const std::vector<std::uint8_t>& data);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// In-memory PNG round-trip, used by the HTTP client payloads.
std::vector<std::uint8_t> encode_png(const ImageU8& img);
ImageU8 decode_png(const std::vector<std::uint8_t>& bytes);

}  // namespace sida
