#include "sida/perturb.hpp"

#include <jpeglib.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "sida/rng.hpp"

namespace sida {

std::string Perturbation::name() const {
    std::ostringstream os;
    switch (kind) {
        case PerturbKind::jpeg:
            os << "JPEG " << static_cast<int>(param);
            break;
        case PerturbKind::resize:
            os << "Resize " << param;
            break;
        case PerturbKind::gaussian:
            os << "Gaussian " << static_cast<int>(param);
            break;
    }
    return os.str();
}

void Perturbation::validate() const {
    switch (kind) {
        case PerturbKind::jpeg:
            if (param < 1 || param > 100) throw std::invalid_argument("jpeg quality must be 1..100");
            break;
        case PerturbKind::resize:
            if (param <= 0 || param > 1) throw std::invalid_argument("resize scale must be in (0,1]");
            break;
        case PerturbKind::gaussian:
            if (param < 0) throw std::invalid_argument("gaussian variance must be >= 0");
            break;
    }
}

// ---------------------------------------------------------------------------
// JPEG round-trip (libjpeg, baseline)

namespace {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    longjmp(err->jump, 1);
}

}  // namespace

ImageU8 jpeg_roundtrip(const ImageU8& image, int quality) {
    if (quality < 1 || quality > 100) throw std::invalid_argument("jpeg quality must be 1..100");
    if (image.channels != 3) throw std::invalid_argument("jpeg_roundtrip: need RGB image");

    // Encode.
    jpeg_compress_struct comp;
    JpegErrorMgr jerr;
    comp.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    unsigned char* buf = nullptr;
    unsigned long buf_size = 0;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_compress(&comp);
        free(buf);
        throw std::runtime_error("jpeg encode failed");
    }
    jpeg_create_compress(&comp);
    jpeg_mem_dest(&comp, &buf, &buf_size);
    comp.image_width = static_cast<JDIMENSION>(image.width);
    comp.image_height = static_cast<JDIMENSION>(image.height);
    comp.input_components = 3;
    comp.in_color_space = JCS_RGB;
    jpeg_set_defaults(&comp);
    jpeg_set_quality(&comp, quality, TRUE /* baseline-compatible tables */);
    jpeg_start_compress(&comp, TRUE);
    std::vector<JSAMPLE> row(static_cast<std::size_t>(image.width) * 3);
    while (comp.next_scanline < comp.image_height) {
        const std::uint8_t* src =
            image.pixels.data() + static_cast<std::size_t>(comp.next_scanline) * image.width * 3;
        std::copy(src, src + row.size(), row.data());
        JSAMPROW rp = row.data();
        jpeg_write_scanlines(&comp, &rp, 1);
    }
    jpeg_finish_compress(&comp);
    jpeg_destroy_compress(&comp);

    // Decode.
    jpeg_decompress_struct dec;
    JpegErrorMgr jerr2;
    dec.err = jpeg_std_error(&jerr2.pub);
    jerr2.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr2.jump)) {
        jpeg_destroy_decompress(&dec);
        free(buf);
        throw std::runtime_error("jpeg decode failed");
    }
    jpeg_create_decompress(&dec);
    jpeg_mem_src(&dec, buf, buf_size);
    jpeg_read_header(&dec, TRUE);
    dec.out_color_space = JCS_RGB;
    jpeg_start_decompress(&dec);
    ImageU8 out;
    out.height = static_cast<int>(dec.output_height);
    out.width = static_cast<int>(dec.output_width);
    out.channels = 3;
    out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * 3);
    while (dec.output_scanline < dec.output_height) {
        JSAMPROW rp = out.pixels.data() + static_cast<std::size_t>(dec.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&dec, &rp, 1);
    }
    jpeg_finish_decompress(&dec);
    jpeg_destroy_decompress(&dec);
    free(buf);
    return out;
}

// ---------------------------------------------------------------------------
// Resize cycle

namespace {

ImageU8 bilinear_resize(const ImageU8& src, int out_h, int out_w) {
    ImageU8 out;
    out.height = out_h;
    out.width = out_w;
    out.channels = src.channels;
    out.pixels.resize(static_cast<std::size_t>(out_h) * out_w * src.channels);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(src.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(src.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < src.channels; ++c) {
                const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
                                 wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
                out.at(y, x, c) = static_cast<std::uint8_t>(
                    std::min(255.0, std::max(0.0, std::round(v))));
            }
        }
    }
    return out;
}

}  // namespace

ImageU8 resize_cycle(const ImageU8& image, double scale) {
    if (scale <= 0 || scale > 1) throw std::invalid_argument("resize scale must be in (0,1]");
    const int down_h = static_cast<int>(std::lround(scale * image.height));
    const int down_w = static_cast<int>(std::lround(scale * image.width));
    if (down_h < 1 || down_w < 1) {
        throw std::invalid_argument("resize scale " + std::to_string(scale) +
                                    " degenerates image to less than one pixel");
    }
    ImageU8 down = bilinear_resize(image, down_h, down_w);
    return bilinear_resize(down, image.height, image.width);
}

ImageU8 gaussian_noise(const ImageU8& image, double variance, std::uint64_t seed) {
    if (variance < 0) throw std::invalid_argument("gaussian variance must be >= 0");
    if (variance == 0) return image;
    Rng rng(seed);
    const double sd = std::sqrt(variance);
    ImageU8 out = image;
    for (auto& p : out.pixels) {
        const double v = std::round(p + rng.normal() * sd);
        p = static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
    }
    return out;
}

ImageU8 apply_perturbation(const ImageU8& image, const Perturbation& p) {
    p.validate();
    switch (p.kind) {
        case PerturbKind::jpeg:
            return jpeg_roundtrip(image, static_cast<int>(p.param));
        case PerturbKind::resize:
            return resize_cycle(image, p.param);
        case PerturbKind::gaussian:
            return gaussian_noise(image, p.param, p.seed);
    }
    throw std::invalid_argument("bad perturbation kind");
}

std::vector<Perturbation> robustness_battery() {
    return {
        {PerturbKind::jpeg, 70.0, 0},    {PerturbKind::jpeg, 80.0, 0},
        {PerturbKind::resize, 0.5, 0},   {PerturbKind::resize, 0.75, 0},
        {PerturbKind::gaussian, 10.0, 0}, {PerturbKind::gaussian, 5.0, 0},
    };
}

RobustnessTable robustness_eval(const SidaModel& model, const std::vector<Sample>& samples,
                                const std::vector<Perturbation>& perturbations,
                                const EvalOptions& opts) {
    RobustnessTable table;
    for (const auto& p : perturbations) {
        std::vector<Sample> degraded = samples;
        for (auto& s : degraded) {
            Perturbation per_image = p;
            // Independent noise per image, reproducible regardless of order.
            per_image.seed = p.seed ^ fnv1a64(s.id);
            s.image = to_float(apply_perturbation(to_u8(s.image), per_image));
        }
        table.rows.push_back({p.name(), evaluate_model(model, degraded, opts)});
    }
    table.rows.push_back({"clean", evaluate_model(model, samples, opts)});
    return table;
}

nlohmann::ordered_json RobustnessTable::to_json() const {
    nlohmann::ordered_json rows_json = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json r = row.report.to_json();
        nlohmann::ordered_json named;
        named["perturbation"] = row.name;
        for (auto& [k, v] : r.items()) named[k] = v;
        rows_json.push_back(named);
    }
    return rows_json;
}

std::string RobustnessTable::to_text() const {
    std::string out = EvalReport::table_header() + "\n";
    for (const auto& row : rows) out += row.report.to_row(row.name) + "\n";
    return out;
}

}  // namespace sida
