#include "sida/mock_service.hpp"

#include <httplib.h>
#include <json.hpp>

#include "sida/clients.hpp"

namespace sida {

void register_mock_routes(httplib::Server& server, std::uint64_t seed) {
    server.Post("/extract", [](const httplib::Request& req, httplib::Response& res) {
        try {
            auto body = nlohmann::json::parse(req.body);
            TokenMatchExtractor ex;
            auto objects = ex.extract(body.at("caption").get<std::string>(),
                                      body.at("class_list").get<std::vector<std::string>>());
            res.set_content(nlohmann::json{{"objects", objects}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(e.what(), "text/plain");
        }
    });
    server.Post("/segment", [](const httplib::Request& req, httplib::Response& res) {
        try {
            auto body = nlohmann::json::parse(req.body);
            ImageU8 image = decode_png(base64_decode(body.at("image_png_b64").get<std::string>()));
            CenterRectSegmenter seg;
            ImageU8 mask = seg.segment(image, body.at("object").get<std::string>());
            res.set_content(
                nlohmann::json{{"mask_png_b64", base64_encode(encode_png(mask))}}.dump(),
                "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(e.what(), "text/plain");
        }
    });
    server.Post("/inpaint", [seed](const httplib::Request& req, httplib::Response& res) {
        try {
            auto body = nlohmann::json::parse(req.body);
            ImageU8 image = decode_png(base64_decode(body.at("image_png_b64").get<std::string>()));
            ImageU8 mask = decode_png(base64_decode(body.at("mask_png_b64").get<std::string>()));
            PatternInpainter inp(seed);
            ImageU8 out = inp.inpaint(image, mask, body.at("instruction").get<std::string>());
            res.set_content(
                nlohmann::json{{"image_png_b64", base64_encode(encode_png(out))}}.dump(),
                "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(e.what(), "text/plain");
        }
    });
}

}  // namespace sida
