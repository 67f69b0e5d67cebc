#include "sida/clients.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "sida/rng.hpp"

namespace sida {

namespace {

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> word_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : lower(text)) {
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '\'') {
            cur.push_back(c);
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

bool token_matches(const std::string& token, const std::string& word) {
    return token == word || token == word + "s" || token == word + "es";
}

}  // namespace

std::vector<std::string> TokenMatchExtractor::extract(const std::string& caption,
                                                      const std::vector<std::string>& class_list) {
    const auto tokens = word_tokens(caption);
    std::vector<std::string> found;
    for (const auto& cls : class_list) {
        const auto cls_tokens = word_tokens(cls);
        if (cls_tokens.empty()) continue;
        bool hit = false;
        for (std::size_t i = 0; !hit && i + cls_tokens.size() <= tokens.size(); ++i) {
            bool all = true;
            for (std::size_t j = 0; j < cls_tokens.size(); ++j) {
                if (!token_matches(tokens[i + j], cls_tokens[j])) {
                    all = false;
                    break;
                }
            }
            hit = all;
        }
        if (hit) found.push_back(cls);
    }
    return found;
}

ImageU8 CenterRectSegmenter::segment(const ImageU8& image, const std::string&) {
    ImageU8 mask = ImageU8::filled(image.height, image.width, 1, 0);
    const int rh = std::max(1, static_cast<int>(image.height * fraction_));
    const int rw = std::max(1, static_cast<int>(image.width * fraction_));
    const int y0 = (image.height - rh) / 2;
    const int x0 = (image.width - rw) / 2;
    for (int y = y0; y < y0 + rh; ++y) {
        for (int x = x0; x < x0 + rw; ++x) mask.at(y, x, 0) = 255;
    }
    return mask;
}

ImageU8 PatternInpainter::inpaint(const ImageU8& image, const ImageU8& mask,
                                  const std::string& instruction) {
    if (mask.height != image.height || mask.width != image.width || mask.channels != 1) {
        throw ClientError("inpaint: mask does not match image dimensions", false);
    }
    const std::uint64_t base = seed_ ^ fnv1a64(instruction);
    ImageU8 out = image;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (mask.at(y, x, 0) < 128) continue;
            Rng px(Rng(base).fork(static_cast<std::uint64_t>(y) * image.width + x).seed());
            for (int c = 0; c < image.channels; ++c) {
                out.at(y, x, c) = static_cast<std::uint8_t>(px.uniform_int(256));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// HTTP clients

namespace {

nlohmann::json post_json(const HttpEndpoint& ep, const std::string& route,
                         const nlohmann::json& body) {
    httplib::Client cli(ep.host, ep.port);
    cli.set_connection_timeout(ep.timeout_seconds);
    cli.set_read_timeout(ep.timeout_seconds);
    auto res = cli.Post(route, body.dump(), "application/json");
    if (!res) {
        throw ClientError("POST " + route + ": connection to " + ep.host + ":" +
                              std::to_string(ep.port) + " failed",
                          true);
    }
    if (res->status != 200) {
        throw ClientError("POST " + route + ": HTTP " + std::to_string(res->status) + " " +
                              res->body,
                          res->status >= 500);
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ClientError("POST " + route + ": bad JSON response: " + e.what(), false);
    }
}

}  // namespace

std::vector<std::string> HttpObjectExtractor::extract(const std::string& caption,
                                                      const std::vector<std::string>& class_list) {
    nlohmann::json req{{"caption", caption}, {"class_list", class_list}};
    auto resp = post_json(ep_, "/extract", req);
    if (!resp.contains("objects") || !resp["objects"].is_array()) {
        throw ClientError("/extract: response missing 'objects' array", false);
    }
    return resp["objects"].get<std::vector<std::string>>();
}

ImageU8 HttpSegmenter::segment(const ImageU8& image, const std::string& phrase) {
    nlohmann::json req{{"image_png_b64", base64_encode(encode_png(image))}, {"object", phrase}};
    auto resp = post_json(ep_, "/segment", req);
    if (!resp.contains("mask_png_b64") || !resp["mask_png_b64"].is_string()) {
        throw ClientError("/segment: response missing 'mask_png_b64'", false);
    }
    ImageU8 mask = decode_png(base64_decode(resp["mask_png_b64"].get<std::string>()));
    if (mask.channels != 1 || mask.height != image.height || mask.width != image.width) {
        throw ClientError("/segment: mask does not match image dimensions", false);
    }
    return mask;
}

ImageU8 HttpInpainter::inpaint(const ImageU8& image, const ImageU8& mask,
                               const std::string& instruction) {
    nlohmann::json req{{"image_png_b64", base64_encode(encode_png(image))},
                       {"mask_png_b64", base64_encode(encode_png(mask))},
                       {"instruction", instruction}};
    auto resp = post_json(ep_, "/inpaint", req);
    if (!resp.contains("image_png_b64") || !resp["image_png_b64"].is_string()) {
        throw ClientError("/inpaint: response missing 'image_png_b64'", false);
    }
    ImageU8 out = decode_png(base64_decode(resp["image_png_b64"].get<std::string>()));
    if (out.height != image.height || out.width != image.width) {
        throw ClientError("/inpaint: output dimensions changed", false);
    }
    return out;
}

}  // namespace sida
