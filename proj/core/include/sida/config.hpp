#pragma once

#include <optional>
#include <string>

#include "sida/datagen.hpp"
#include "sida/model.hpp"
#include "sida/trainer.hpp"

#include <json.hpp>

namespace sida {

// Structured run configuration. Parsing is strict: unknown keys anywhere in
// the document are rejected, and every run logs the resolved config hash.
struct RunConfig {
    SidaConfig model;
    TrainConfig train;
    std::string weights_preset = "sec56";  // "sec5" | "sec56"
    std::uint64_t seed = 0;

    struct Paths {
        std::string manifest;
        std::string data_dir;
    } paths;

    struct DatagenSection {
        std::string captions;  // JSON array of {image_id, caption, image_path?}
        std::string dicts;     // optional replacement-dictionary file
        std::string templates; // optional description-template file
        double object_ratio = 0.8;
        int parallelism = 2;
        int inpaint_retries = 2;
        double skip_threshold = 0.5;
        int placeholder_size = 64;
        HttpEndpoint extract, segment, inpaint;
    } datagen;

    int eval_threads = 2;

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);

    nlohmann::ordered_json to_json() const;
    std::uint64_t config_hash() const;
    std::string config_hash_hex() const;
};

std::vector<PipelineInput> load_pipeline_inputs(const std::string& path);

}  // namespace sida
