#pragma once

#include <string>
#include <vector>

#include "sida/eval.hpp"
#include "sida/image.hpp"

namespace sida {

enum class PerturbKind { jpeg, resize, gaussian };

struct Perturbation {
    PerturbKind kind = PerturbKind::jpeg;
    double param = 0.0;  // quality | scale | variance
    std::uint64_t seed = 0;

    std::string name() const;  // "JPEG 70", "Resize 0.5", "Gaussian 10"
    void validate() const;
};

// Baseline JPEG encode at the given quality, then decode. Dimensions are
// preserved; the codec is deterministic.
ImageU8 jpeg_roundtrip(const ImageU8& image, int quality);

// Bilinear downscale to round(scale*h) x round(scale*w), then bilinear
// upscale back. scale 1.0 is the identity.
ImageU8 resize_cycle(const ImageU8& image, double scale);

// Adds i.i.d. N(0, variance) per channel on the 0-255 scale, rounds, clamps.
ImageU8 gaussian_noise(const ImageU8& image, double variance, std::uint64_t seed);

ImageU8 apply_perturbation(const ImageU8& image, const Perturbation& p);

// The six standard degradations, in report order.
std::vector<Perturbation> robustness_battery();

struct RobustnessRow {
    std::string name;
    EvalReport report;
};

struct RobustnessTable {
    std::vector<RobustnessRow> rows;

    nlohmann::ordered_json to_json() const;
    std::string to_text() const;
};

// One report row per perturbation plus a trailing clean row. The clean row
// is an unperturbed evaluation of the same samples.
RobustnessTable robustness_eval(const SidaModel& model, const std::vector<Sample>& samples,
                                const std::vector<Perturbation>& perturbations,
                                const EvalOptions& opts = {});

}  // namespace sida
