#include "sida/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sida {

ImageU8 ImageU8::filled(int height, int width, int channels, std::uint8_t value) {
    ImageU8 img;
    img.height = height;
    img.width = width;
    img.channels = channels;
    img.pixels.assign(static_cast<std::size_t>(height) * width * channels, value);
    return img;
}

std::uint8_t& ImageU8::at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
}

std::uint8_t ImageU8::at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
}

ImageF to_float(const ImageU8& img) {
    if (img.channels != 3) throw std::invalid_argument("to_float: need 3-channel image");
    ImageF out;
    out.height = img.height;
    out.width = img.width;
    out.data.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) out.data[i] = img.pixels[i] / 255.0;
    return out;
}

ImageU8 to_u8(const ImageF& img) {
    ImageU8 out;
    out.height = img.height;
    out.width = img.width;
    out.channels = 3;
    out.pixels.resize(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = std::lround(img.data[i] * 255.0);
        out.pixels[i] = static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
    }
    return out;
}

Tensor mask_to_tensor(const ImageU8& mask) {
    if (mask.channels != 1) throw std::invalid_argument("mask_to_tensor: need 1-channel mask");
    std::vector<double> v(mask.pixels.size());
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) v[i] = mask.pixels[i] >= 128 ? 1.0 : 0.0;
    return Tensor::from({mask.height, mask.width}, std::move(v));
}

ImageU8 tensor_to_mask(const Tensor& mask) {
    if (mask.ndim() != 2) throw ShapeError("tensor_to_mask: need [h x w], got " + shape_str(mask.shape()));
    ImageU8 out;
    out.height = mask.shape()[0];
    out.width = mask.shape()[1];
    out.channels = 1;
    out.pixels.resize(mask.values().size());
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        out.pixels[i] = mask.values()[i] >= 0.5 ? 255 : 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngReadCtx {
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset;
};

void png_read_from_vector(png_structp png, png_bytep out, png_size_t len) {
    auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
    if (ctx->offset + len > ctx->bytes->size()) {
        png_error(png, "png: truncated stream");
    }
    std::memcpy(out, ctx->bytes->data() + ctx->offset, len);
    ctx->offset += len;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

ImageU8 decode_png_impl(png_structp png, png_infop info) {
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    color_type = png_get_color_type(png, info);
    int channels = (color_type == PNG_COLOR_TYPE_GRAY) ? 1 : 3;

    ImageU8 img;
    img.height = static_cast<int>(h);
    img.width = static_cast<int>(w);
    img.channels = channels;
    img.pixels.resize(static_cast<std::size_t>(h) * w * channels);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) {
        rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * channels;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return img;
}

void encode_png_impl(png_structp png, png_infop info, const ImageU8& img) {
    int color_type = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.width, img.height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) {
        rows[y] = const_cast<png_bytep>(img.pixels.data() +
                                        static_cast<std::size_t>(y) * img.width * img.channels);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
}

}  // namespace

ImageU8 decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw std::runtime_error("decode_png: not a PNG stream");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("decode_png: init failed");
    png_infop info = png_create_info_struct(png);
    PngReadCtx ctx{&bytes, 0};
    ImageU8 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("decode_png: corrupt PNG data");
    }
    png_set_read_fn(png, &ctx, png_read_from_vector);
    img = decode_png_impl(png, info);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

std::vector<std::uint8_t> encode_png(const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw std::invalid_argument("encode_png: channels must be 1 or 3");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("encode_png: init failed");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("encode_png: write failed");
    }
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    encode_png_impl(png, info, img);
    png_destroy_write_struct(&png, &info);
    return out;
}

// ---------------------------------------------------------------------------
// PPM (binary P6)

namespace {

ImageU8 load_ppm(std::ifstream& in, const std::string& path) {
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error(path + ": unsupported PPM magic '" + magic + "'");
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (!in || w <= 0 || h <= 0) throw std::runtime_error(path + ": malformed PPM header");
    if (maxval != 255) throw std::runtime_error(path + ": only 8-bit PPM supported");
    in.get();  // single whitespace after header
    ImageU8 img;
    img.height = h;
    img.width = w;
    img.channels = 3;
    img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) {
        throw std::runtime_error(path + ": truncated PPM data");
    }
    return img;
}

void save_ppm(const ImageU8& img, const std::string& path) {
    if (img.channels != 3) throw std::invalid_argument(path + ": PPM requires 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

ImageU8 load_image_u8(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    unsigned char sig[2] = {0, 0};
    in.read(reinterpret_cast<char*>(sig), 2);
    in.seekg(0);
    if (sig[0] == 'P' && sig[1] == '6') return load_ppm(in, path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    try {
        return decode_png(bytes);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void save_image_u8(const ImageU8& img, const std::string& path) {
    if (has_suffix(path, ".ppm")) {
        save_ppm(img, path);
        return;
    }
    auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

ImageF load_image(const std::string& path) {
    ImageU8 img = load_image_u8(path);
    if (img.channels == 1) {
        // Promote grayscale to RGB.
        ImageU8 rgb;
        rgb.height = img.height;
        rgb.width = img.width;
        rgb.channels = 3;
        rgb.pixels.resize(img.pixels.size() * 3);
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            rgb.pixels[3 * i] = rgb.pixels[3 * i + 1] = rgb.pixels[3 * i + 2] = img.pixels[i];
        }
        return to_float(rgb);
    }
    return to_float(img);
}

Tensor load_mask(const std::string& path) {
    ImageU8 img = load_image_u8(path);
    if (img.channels != 1) {
        throw std::runtime_error(path + ": mask must be 8-bit grayscale, got " +
                                 std::to_string(img.channels) + " channels");
    }
    return mask_to_tensor(img);
}

// ---------------------------------------------------------------------------
// Base64

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& data) {
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back(kB64[v & 63]);
    }
    if (i + 1 == data.size()) {
        std::uint32_t v = data[i] << 16;
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == data.size()) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        int v = val(c);
        if (v < 0) throw std::invalid_argument("base64_decode: invalid character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

}  // namespace sida
