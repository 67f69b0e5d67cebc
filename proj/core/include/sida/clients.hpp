#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sida/image.hpp"

namespace sida {

struct ClientError : std::runtime_error {
    ClientError(const std::string& msg, bool retriable)
        : std::runtime_error(msg), retriable(retriable) {}
    bool retriable;
};

// Request/response contracts for the external generation backends. The
// production services sit behind HTTP; the mock implementations below run
// in-process and are fully deterministic.

class ObjectExtractor {
public:
    virtual ~ObjectExtractor() = default;
    virtual std::vector<std::string> extract(const std::string& caption,
                                             const std::vector<std::string>& class_list) = 0;
};

class Segmenter {
public:
    virtual ~Segmenter() = default;
    // Returns a 1-channel mask with the image's dimensions, {0, 255}.
    virtual ImageU8 segment(const ImageU8& image, const std::string& phrase) = 0;
};

class Inpainter {
public:
    virtual ~Inpainter() = default;
    // Returns an image with the same dimensions; the mock touches only
    // masked pixels.
    virtual ImageU8 inpaint(const ImageU8& image, const ImageU8& mask,
                            const std::string& instruction) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic offline mocks

// Case-insensitive token/phrase matching of class names against the caption.
class TokenMatchExtractor : public ObjectExtractor {
public:
    std::vector<std::string> extract(const std::string& caption,
                                     const std::vector<std::string>& class_list) override;
};

// Always returns the configured list. Handy for pinning pipeline behaviour.
class EchoExtractor : public ObjectExtractor {
public:
    explicit EchoExtractor(std::vector<std::string> objects) : objects_(std::move(objects)) {}
    std::vector<std::string> extract(const std::string&, const std::vector<std::string>&) override {
        return objects_;
    }

private:
    std::vector<std::string> objects_;
};

// Centered rectangle covering the given fraction of each dimension.
class CenterRectSegmenter : public Segmenter {
public:
    explicit CenterRectSegmenter(double fraction = 0.5) : fraction_(fraction) {}
    ImageU8 segment(const ImageU8& image, const std::string& phrase) override;

private:
    double fraction_;
};

// Fills the masked region with a pattern derived from (seed, instruction,
// pixel position); pixels outside the mask are byte-identical to the source.
class PatternInpainter : public Inpainter {
public:
    explicit PatternInpainter(std::uint64_t seed = 0) : seed_(seed) {}
    ImageU8 inpaint(const ImageU8& image, const ImageU8& mask,
                    const std::string& instruction) override;

private:
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// HTTP clients (POST /extract, /segment, /inpaint; JSON bodies with
// base64-encoded PNG payloads)

struct HttpEndpoint {
    std::string host = "127.0.0.1";
    int port = 0;
    int timeout_seconds = 10;
};

class HttpObjectExtractor : public ObjectExtractor {
public:
    explicit HttpObjectExtractor(HttpEndpoint ep) : ep_(std::move(ep)) {}
    std::vector<std::string> extract(const std::string& caption,
                                     const std::vector<std::string>& class_list) override;

private:
    HttpEndpoint ep_;
};

class HttpSegmenter : public Segmenter {
public:
    explicit HttpSegmenter(HttpEndpoint ep) : ep_(std::move(ep)) {}
    ImageU8 segment(const ImageU8& image, const std::string& phrase) override;

private:
    HttpEndpoint ep_;
};

class HttpInpainter : public Inpainter {
public:
    explicit HttpInpainter(HttpEndpoint ep) : ep_(std::move(ep)) {}
    ImageU8 inpaint(const ImageU8& image, const ImageU8& mask,
                    const std::string& instruction) override;

private:
    HttpEndpoint ep_;
};

}  // namespace sida
