#include "sida/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace sida {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& context) {
    if (!j.is_object()) throw ConfigError("config section '" + context + "' must be an object");
    for (const auto& [k, _] : j.items()) {
        if (allowed.count(k) == 0) {
            throw ConfigError("unknown key '" + k + "' in config section '" + context + "'");
        }
    }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

HttpEndpoint endpoint_from_json(const nlohmann::json& j, const std::string& context) {
    check_keys(j, {"host", "port", "timeout_seconds"}, context);
    HttpEndpoint ep;
    read_if(j, "host", ep.host);
    read_if(j, "port", ep.port);
    read_if(j, "timeout_seconds", ep.timeout_seconds);
    return ep;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    check_keys(j, {"model", "train", "weights", "weights_preset", "seed", "paths", "datagen",
                   "eval_threads"},
               "(root)");
    RunConfig cfg;
    read_if(j, "seed", cfg.seed);
    read_if(j, "eval_threads", cfg.eval_threads);

    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m,
                   {"d_model", "n_layers", "n_heads", "d_ff", "image_size", "patch_size",
                    "max_seq_len", "d_feat", "fusion_mode", "seg_sequence_len", "upsample",
                    "prompt"},
                   "model");
        read_if(m, "d_model", cfg.model.vlm.d_model);
        read_if(m, "n_layers", cfg.model.vlm.n_layers);
        read_if(m, "n_heads", cfg.model.vlm.n_heads);
        read_if(m, "d_ff", cfg.model.vlm.d_ff);
        read_if(m, "image_size", cfg.model.vlm.image_size);
        read_if(m, "patch_size", cfg.model.vlm.patch_size);
        read_if(m, "max_seq_len", cfg.model.vlm.max_seq_len);
        read_if(m, "d_feat", cfg.model.d_feat);
        if (m.contains("fusion_mode")) {
            cfg.model.fusion_mode = fusion_mode_from_name(m.at("fusion_mode").get<std::string>());
        }
        read_if(m, "seg_sequence_len", cfg.model.seg_sequence_len);
        read_if(m, "upsample", cfg.model.upsample);
        read_if(m, "prompt", cfg.model.prompt);
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t,
                   {"learning_rate", "batch_size", "grad_accum_steps", "max_steps_stage1",
                    "max_steps_stage2", "lora", "reset_optimizer_between_stages"},
                   "train");
        read_if(t, "learning_rate", cfg.train.learning_rate);
        read_if(t, "batch_size", cfg.train.batch_size);
        read_if(t, "grad_accum_steps", cfg.train.grad_accum_steps);
        read_if(t, "max_steps_stage1", cfg.train.max_steps_stage1);
        read_if(t, "max_steps_stage2", cfg.train.max_steps_stage2);
        read_if(t, "reset_optimizer_between_stages", cfg.train.reset_optimizer_between_stages);
        if (t.contains("lora") && !t.at("lora").is_null()) {
            const auto& l = t.at("lora");
            check_keys(l, {"rank", "alpha", "dropout"}, "train.lora");
            LoraConfig lc;
            read_if(l, "rank", lc.rank);
            read_if(l, "alpha", lc.alpha);
            read_if(l, "dropout", lc.dropout);
            cfg.train.lora = lc;
        }
    }

    read_if(j, "weights_preset", cfg.weights_preset);
    cfg.train.weights = LossWeights::preset(cfg.weights_preset);
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        check_keys(w, {"lambda_det", "lambda_mask", "lambda_txt", "lambda_bce", "lambda_dice"},
                   "weights");
        read_if(w, "lambda_det", cfg.train.weights.lambda_det);
        read_if(w, "lambda_mask", cfg.train.weights.lambda_mask);
        read_if(w, "lambda_txt", cfg.train.weights.lambda_txt);
        read_if(w, "lambda_bce", cfg.train.weights.lambda_bce);
        read_if(w, "lambda_dice", cfg.train.weights.lambda_dice);
    }
    cfg.train.seed = cfg.seed;

    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        check_keys(p, {"manifest", "data_dir"}, "paths");
        read_if(p, "manifest", cfg.paths.manifest);
        read_if(p, "data_dir", cfg.paths.data_dir);
    }

    if (j.contains("datagen")) {
        const auto& d = j.at("datagen");
        check_keys(d,
                   {"captions", "dicts", "templates", "object_ratio", "parallelism",
                    "inpaint_retries", "skip_threshold", "placeholder_size", "extract", "segment",
                    "inpaint"},
                   "datagen");
        read_if(d, "captions", cfg.datagen.captions);
        read_if(d, "dicts", cfg.datagen.dicts);
        read_if(d, "templates", cfg.datagen.templates);
        read_if(d, "object_ratio", cfg.datagen.object_ratio);
        read_if(d, "parallelism", cfg.datagen.parallelism);
        read_if(d, "inpaint_retries", cfg.datagen.inpaint_retries);
        read_if(d, "skip_threshold", cfg.datagen.skip_threshold);
        read_if(d, "placeholder_size", cfg.datagen.placeholder_size);
        if (d.contains("extract")) cfg.datagen.extract = endpoint_from_json(d.at("extract"), "datagen.extract");
        if (d.contains("segment")) cfg.datagen.segment = endpoint_from_json(d.at("segment"), "datagen.segment");
        if (d.contains("inpaint")) cfg.datagen.inpaint = endpoint_from_json(d.at("inpaint"), "datagen.inpaint");
    }

    cfg.model.validate();
    cfg.train.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["model"] = {{"d_model", model.vlm.d_model},
                  {"n_layers", model.vlm.n_layers},
                  {"n_heads", model.vlm.n_heads},
                  {"d_ff", model.vlm.d_ff},
                  {"image_size", model.vlm.image_size},
                  {"patch_size", model.vlm.patch_size},
                  {"max_seq_len", model.vlm.max_seq_len},
                  {"d_feat", model.d_feat},
                  {"fusion_mode", fusion_mode_name(model.fusion_mode)},
                  {"seg_sequence_len", model.seg_sequence_len},
                  {"upsample", model.upsample},
                  {"prompt", model.prompt}};
    j["train"] = {{"learning_rate", train.learning_rate},
                  {"batch_size", train.batch_size},
                  {"grad_accum_steps", train.grad_accum_steps},
                  {"max_steps_stage1", train.max_steps_stage1},
                  {"max_steps_stage2", train.max_steps_stage2},
                  {"reset_optimizer_between_stages", train.reset_optimizer_between_stages}};
    if (train.lora) {
        j["train"]["lora"] = {{"rank", train.lora->rank},
                              {"alpha", train.lora->alpha},
                              {"dropout", train.lora->dropout}};
    }
    j["weights_preset"] = weights_preset;
    j["weights"] = {{"lambda_det", train.weights.lambda_det},
                    {"lambda_mask", train.weights.lambda_mask},
                    {"lambda_txt", train.weights.lambda_txt},
                    {"lambda_bce", train.weights.lambda_bce},
                    {"lambda_dice", train.weights.lambda_dice}};
    j["seed"] = seed;
    j["eval_threads"] = eval_threads;
    j["paths"] = {{"manifest", paths.manifest}, {"data_dir", paths.data_dir}};
    j["datagen"] = {{"captions", datagen.captions},
                    {"dicts", datagen.dicts},
                    {"templates", datagen.templates},
                    {"object_ratio", datagen.object_ratio},
                    {"parallelism", datagen.parallelism},
                    {"inpaint_retries", datagen.inpaint_retries},
                    {"skip_threshold", datagen.skip_threshold},
                    {"placeholder_size", datagen.placeholder_size},
                    {"extract", {{"host", datagen.extract.host}, {"port", datagen.extract.port}}},
                    {"segment", {{"host", datagen.segment.host}, {"port", datagen.segment.port}}},
                    {"inpaint", {{"host", datagen.inpaint.host}, {"port", datagen.inpaint.port}}}};
    return j;
}

std::uint64_t RunConfig::config_hash() const { return fnv1a64(to_json().dump()); }

std::string RunConfig::config_hash_hex() const {
    std::ostringstream os;
    os << std::hex << config_hash();
    return os.str();
}

std::vector<PipelineInput> load_pipeline_inputs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open captions file " + path);
    nlohmann::json arr = nlohmann::json::parse(in);
    if (!arr.is_array()) throw std::runtime_error(path + ": expected a JSON array");
    std::vector<PipelineInput> out;
    for (const auto& j : arr) {
        PipelineInput p;
        p.image_id = j.at("image_id").get<std::string>();
        p.caption = j.at("caption").get<std::string>();
        if (j.contains("image_path")) p.image_path = j.at("image_path").get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace sida
