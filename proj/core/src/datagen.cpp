#include "sida/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>

#include "sida/image.hpp"
#include "sida/util.hpp"

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

// Find the first word-boundary occurrence of `phrase` (or its naive plural)
// in `text`, case-insensitive. Returns (offset, length) or (npos, 0).
std::pair<std::size_t, std::size_t> find_phrase(const std::string& text, const std::string& phrase) {
    const std::string low = lower(text);
    for (const std::string& candidate : {lower(phrase), lower(phrase) + "s", lower(phrase) + "es"}) {
        std::size_t from = 0;
        while (true) {
            std::size_t pos = low.find(candidate, from);
            if (pos == std::string::npos) break;
            const bool left_ok =
                pos == 0 || !std::isalpha(static_cast<unsigned char>(low[pos - 1]));
            const std::size_t end = pos + candidate.size();
            const bool right_ok =
                end >= low.size() || !std::isalpha(static_cast<unsigned char>(low[end]));
            if (left_ok && right_ok) return {pos, candidate.size()};
            from = pos + 1;
        }
    }
    return {std::string::npos, 0};
}

}  // namespace

// ---------------------------------------------------------------------------
// Records

nlohmann::ordered_json CaptionRecord::to_json() const {
    return {{"image_id", image_id}, {"caption", caption}, {"objects", objects}};
}

CaptionRecord CaptionRecord::from_json(const nlohmann::json& j) {
    CaptionRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.caption = j.at("caption").get<std::string>();
    r.objects = j.at("objects").get<std::vector<std::string>>();
    return r;
}

void save_caption_records(const std::vector<CaptionRecord>& records, const std::string& path) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : records) arr.push_back(r.to_json());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << arr.dump(2) << "\n";
}

std::vector<CaptionRecord> load_caption_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json arr = nlohmann::json::parse(in);
    if (!arr.is_array()) throw std::runtime_error(path + ": expected a JSON array");
    std::vector<CaptionRecord> out;
    for (const auto& j : arr) out.push_back(CaptionRecord::from_json(j));
    return out;
}

const char* tamper_mode_name(TamperMode m) {
    return m == TamperMode::object ? "object" : "attribute";
}

nlohmann::ordered_json TamperRecord::to_json() const {
    return {{"schema_version", 1},
            {"image_id", image_id},
            {"mode", tamper_mode_name(mode)},
            {"target_object", target_object},
            {"edit", edit},
            {"edited_caption", edited_caption},
            {"mask_path", mask_path},
            {"output_path", output_path}};
}

TamperRecord TamperRecord::from_json(const nlohmann::json& j) {
    const int version = j.at("schema_version").get<int>();
    if (version != 1) {
        throw std::runtime_error("unsupported tamper record schema_version " +
                                 std::to_string(version));
    }
    TamperRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "object") {
        r.mode = TamperMode::object;
    } else if (mode == "attribute") {
        r.mode = TamperMode::attribute;
    } else {
        throw std::runtime_error("unknown tamper mode '" + mode + "'");
    }
    r.target_object = j.at("target_object").get<std::string>();
    r.edit = j.at("edit").get<std::string>();
    r.edited_caption = j.at("edited_caption").get<std::string>();
    r.mask_path = j.at("mask_path").get<std::string>();
    r.output_path = j.at("output_path").get<std::string>();
    return r;
}

void save_tamper_records(const std::vector<TamperRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& r : records) out << r.to_json().dump() << "\n";
}

std::vector<TamperRecord> load_tamper_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<TamperRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(TamperRecord::from_json(nlohmann::json::parse(line)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dictionaries

void ReplacementDicts::validate() const {
    for (const auto& [key, candidates] : object_map) {
        if (candidates.empty()) {
            throw ConfigError("object_map['" + key + "'] has no candidates");
        }
        for (const auto& c : candidates) {
            if (c == key) throw ConfigError("object_map['" + key + "'] maps to itself");
        }
    }
    for (const auto& [key, candidates] : attribute_map) {
        if (candidates.empty()) {
            throw ConfigError("attribute_map['" + key + "'] has no candidates");
        }
    }
}

ReplacementDicts ReplacementDicts::builtin() {
    ReplacementDicts d;
    d.object_map = {
        {"dog", {"cat", "sheep", "horse", "bear"}},
        {"cat", {"dog", "rabbit", "fox"}},
        {"horse", {"cow", "zebra", "donkey"}},
        {"cow", {"horse", "sheep", "bison"}},
        {"sheep", {"goat", "dog", "cow"}},
        {"bird", {"kite", "butterfly", "bat"}},
        {"car", {"truck", "bus", "van"}},
        {"truck", {"car", "bus", "tractor"}},
        {"bus", {"truck", "train", "tram"}},
        {"bicycle", {"motorcycle", "scooter"}},
        {"motorcycle", {"bicycle", "scooter"}},
        {"boat", {"canoe", "yacht", "raft"}},
        {"apple", {"orange", "pear", "peach"}},
        {"orange", {"apple", "lemon", "grapefruit"}},
        {"pizza", {"cake", "pie", "sandwich"}},
        {"cup", {"bottle", "bowl", "mug"}},
        {"bottle", {"cup", "vase", "jar"}},
        {"chair", {"bench", "stool", "couch"}},
        {"couch", {"chair", "bench", "bed"}},
        {"laptop", {"book", "tv", "keyboard"}},
    };
    d.attribute_map = {
        {"dog", {"happy", "angry", "running", "sleeping"}},
        {"cat", {"happy", "angry", "fluffy", "sleeping"}},
        {"horse", {"galloping", "white", "black"}},
        {"cow", {"spotted", "brown", "grazing"}},
        {"sheep", {"woolly", "white", "grazing"}},
        {"bird", {"colorful", "flying", "perched"}},
        {"car", {"red", "vintage", "shiny"}},
        {"truck", {"rusty", "blue", "heavy"}},
        {"bus", {"yellow", "crowded", "double-decker"}},
        {"person", {"smiling", "elderly", "young"}},
        {"chair", {"wooden", "broken", "antique"}},
        {"cup", {"steaming", "empty", "cracked"}},
    };
    return d;
}

ReplacementDicts ReplacementDicts::from_json(const nlohmann::json& j) {
    ReplacementDicts d;
    if (j.contains("object_map")) {
        for (const auto& [k, v] : j.at("object_map").items()) {
            d.object_map[k] = v.get<std::vector<std::string>>();
        }
    }
    if (j.contains("attribute_map")) {
        for (const auto& [k, v] : j.at("attribute_map").items()) {
            d.attribute_map[k] = v.get<std::vector<std::string>>();
        }
    }
    d.validate();
    return d;
}

ReplacementDicts ReplacementDicts::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return from_json(nlohmann::json::parse(in));
}

nlohmann::ordered_json ReplacementDicts::to_json() const {
    nlohmann::ordered_json j;
    for (const auto& [k, v] : object_map) j["object_map"][k] = v;
    for (const auto& [k, v] : attribute_map) j["attribute_map"][k] = v;
    return j;
}

// ---------------------------------------------------------------------------
// Class list

const std::vector<std::string>& coco_classes() {
    static const std::vector<std::string> classes = {
        "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
        "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat",
        "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack",
        "umbrella", "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball",
        "kite", "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket",
        "bottle", "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
        "sandwich", "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
        "couch", "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse",
        "remote", "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
        "refrigerator", "book", "clock", "vase", "scissors", "teddy bear", "hair drier",
        "toothbrush"};
    return classes;
}

// ---------------------------------------------------------------------------
// Stage 1

std::vector<std::string> match_classes(const std::string& caption,
                                       const std::vector<std::string>& class_list) {
    TokenMatchExtractor matcher;
    return matcher.extract(caption, class_list);
}

std::vector<std::string> retain_nouns(const std::string& caption) {
    // Stoplist heuristic: drop determiners, prepositions, pronouns,
    // conjunctions and frequent verbs/adjectives; what remains is treated
    // as nouns. The last token backstops captions made only of stop words.
    static const std::set<std::string> kStop = {
        "a",      "an",     "the",    "this",   "that",   "these",  "those",  "his",
        "her",    "its",    "their",  "my",     "your",   "our",    "some",   "any",
        "of",     "on",     "in",     "at",     "by",     "to",     "from",   "with",
        "over",   "under",  "above",  "below",  "near",   "beside", "behind", "between",
        "into",   "onto",   "off",    "up",     "down",   "top",    "front",  "back",
        "and",    "or",     "but",    "while",  "as",     "is",     "are",    "was",
        "were",   "be",     "been",   "being",  "has",    "have",   "had",    "laying",
        "lying",  "sitting", "standing", "looking", "holding", "wearing", "walking",
        "running", "eating", "playing", "riding", "resting", "sleeping", "perched",
        "next",   "there",  "here",   "it",     "they",   "he",     "she",    "who",
        "which",  "large",  "small",  "big",    "little", "fluffy", "furry",  "wooden",
        "metal",  "plastic", "old",   "new",    "young",  "red",    "blue",   "green",
        "white",  "black",  "brown",  "yellow", "gray",   "grey",   "two",    "three",
        "several", "many",  "few",    "one",    "very"};
    const auto tokens = word_tokens(caption);
    std::vector<std::string> nouns;
    for (const auto& t : tokens) {
        if (kStop.count(t) == 0 && std::find(nouns.begin(), nouns.end(), t) == nouns.end()) {
            nouns.push_back(t);
        }
    }
    if (nouns.empty() && !tokens.empty()) nouns.push_back(tokens.back());
    return nouns;
}

CaptionRecord stage1_extract(const std::string& image_id, const std::string& caption,
                             const std::vector<std::string>& class_list,
                             ObjectExtractor& extractor) {
    if (caption.empty()) throw std::invalid_argument("stage1_extract: empty caption");
    CaptionRecord rec;
    rec.image_id = image_id;
    rec.caption = caption;
    std::vector<std::string> raw = extractor.extract(caption, class_list);
    for (const auto& obj : raw) {
        if (std::find(class_list.begin(), class_list.end(), obj) != class_list.end() &&
            std::find(rec.objects.begin(), rec.objects.end(), obj) == rec.objects.end()) {
            rec.objects.push_back(obj);
        }
    }
    if (rec.objects.empty()) rec.objects = match_classes(caption, class_list);
    if (rec.objects.empty()) rec.objects = retain_nouns(caption);
    return rec;
}

// ---------------------------------------------------------------------------
// Stage 2

std::optional<ImageU8> stage2_mask(const ImageU8& image, const std::string& phrase,
                                   Segmenter& segmenter) {
    if (phrase.empty()) throw std::invalid_argument("stage2_mask: empty object phrase");
    ImageU8 mask = segmenter.segment(image, phrase);
    if (mask.height != image.height || mask.width != image.width || mask.channels != 1) {
        throw ClientError("segmenter mask does not match image dimensions", false);
    }
    bool any = false;
    for (std::uint8_t v : mask.pixels) any |= v >= 128;
    if (!any) return std::nullopt;
    return mask;
}

// ---------------------------------------------------------------------------
// Stage 3

std::optional<TamperDraft> stage3_select(const CaptionRecord& record,
                                         const ReplacementDicts& dicts, Rng& rng,
                                         double object_ratio) {
    if (record.objects.empty()) return std::nullopt;
    // Fixed draw order: target, mode, edit.
    const std::string target =
        record.objects[rng.uniform_int(static_cast<int>(record.objects.size()))];
    TamperMode mode = rng.uniform() < object_ratio ? TamperMode::object : TamperMode::attribute;

    const bool in_object = dicts.object_map.count(target) > 0;
    const bool in_attribute = dicts.attribute_map.count(target) > 0;
    if (!in_object && !in_attribute) return std::nullopt;
    if (mode == TamperMode::object && !in_object) mode = TamperMode::attribute;
    if (mode == TamperMode::attribute && !in_attribute) mode = TamperMode::object;

    const auto& candidates = mode == TamperMode::object ? dicts.object_map.at(target)
                                                        : dicts.attribute_map.at(target);
    const std::string edit = candidates[rng.uniform_int(static_cast<int>(candidates.size()))];

    auto [pos, len] = find_phrase(record.caption, target);
    if (pos == std::string::npos) return std::nullopt;

    TamperDraft draft;
    draft.image_id = record.image_id;
    draft.mode = mode;
    draft.target_object = target;
    draft.edit = edit;
    if (mode == TamperMode::object) {
        draft.edited_caption = record.caption.substr(0, pos) + edit + record.caption.substr(pos + len);
    } else {
        draft.edited_caption =
            record.caption.substr(0, pos) + edit + " " + record.caption.substr(pos);
    }
    draft.instruction = draft.edited_caption;
    return draft;
}

// ---------------------------------------------------------------------------
// Stage 4

std::optional<ImageU8> stage4_inpaint(const TamperDraft& draft, const ImageU8& image,
                                      const ImageU8& mask, Inpainter& inpainter, int retries,
                                      std::string* error) {
    std::string last_error;
    for (int attempt = 0; attempt <= retries; ++attempt) {
        try {
            return inpainter.inpaint(image, mask, draft.instruction);
        } catch (const ClientError& e) {
            last_error = e.what();
            if (!e.retriable) break;
        } catch (const std::exception& e) {
            last_error = e.what();
            break;
        }
    }
    if (error) *error = last_error;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

ImageU8 placeholder_image(const std::string& image_id, int size) {
    Rng rng(fnv1a64(image_id));
    const std::uint8_t r = static_cast<std::uint8_t>(rng.uniform_int(256));
    const std::uint8_t g = static_cast<std::uint8_t>(rng.uniform_int(256));
    const std::uint8_t b = static_cast<std::uint8_t>(rng.uniform_int(256));
    ImageU8 img = ImageU8::filled(size, size, 3, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    }
    return img;
}

struct RecordOutcome {
    std::optional<CaptionRecord> caption;
    std::optional<TamperRecord> record;
    std::optional<SkipLog> skip;
};

}  // namespace

PipelineResult run_pipeline(const std::vector<PipelineInput>& inputs, ObjectExtractor& extractor,
                            Segmenter& segmenter, Inpainter& inpainter,
                            const PipelineConfig& config) {
    if (config.out_dir.empty()) throw ConfigError("pipeline out_dir is required");
    config.dicts.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(config.out_dir) / "masks");
    fs::create_directories(fs::path(config.out_dir) / "images");

    auto process = [&](const PipelineInput& input, std::size_t) -> RecordOutcome {
        RecordOutcome out;
        auto skip = [&](const char* stage, const std::string& reason) {
            out.skip = SkipLog{input.image_id, stage, reason};
            return out;
        };
        // Stage 1: objects from the caption.
        CaptionRecord rec;
        try {
            rec = stage1_extract(input.image_id, input.caption, config.class_list, extractor);
        } catch (const std::exception& e) {
            return skip("stage1", e.what());
        }
        out.caption = rec;

        // Stage 3 runs before the segmenter call so the mask request can
        // name the chosen object.
        Rng rng = Rng(config.seed).fork(fnv1a64(input.image_id));
        auto draft = stage3_select(rec, config.dicts, rng, config.object_ratio);
        if (!draft) return skip("stage3", "object not in any dictionary or caption");

        // Stage 2: ground-truth mask for the chosen object.
        ImageU8 source;
        try {
            source = input.image_path ? load_image_u8(*input.image_path)
                                      : placeholder_image(input.image_id, config.placeholder_size);
        } catch (const std::exception& e) {
            return skip("stage2", e.what());
        }
        std::optional<ImageU8> mask;
        try {
            mask = stage2_mask(source, draft->target_object, segmenter);
        } catch (const std::exception& e) {
            return skip("stage2", e.what());
        }
        if (!mask) return skip("stage2", "segmenter returned an empty mask");

        // Stage 4: inpaint with bounded retries.
        std::string last_error;
        std::optional<ImageU8> edited =
            stage4_inpaint(*draft, source, *mask, inpainter, config.inpaint_retries, &last_error);
        if (!edited) return skip("stage4", last_error);

        TamperRecord record;
        record.image_id = input.image_id;
        record.mode = draft->mode;
        record.target_object = draft->target_object;
        record.edit = draft->edit;
        record.edited_caption = draft->edited_caption;
        record.mask_path = "masks/" + input.image_id + ".png";
        record.output_path = "images/" + input.image_id + ".png";
        save_image_u8(*mask, (fs::path(config.out_dir) / record.mask_path).string());
        save_image_u8(*edited, (fs::path(config.out_dir) / record.output_path).string());
        out.record = std::move(record);
        return out;
    };

    std::vector<RecordOutcome> outcomes =
        parallel_map<RecordOutcome>(inputs, config.parallelism, process);

    PipelineResult result;
    for (auto& o : outcomes) {
        if (o.caption) result.caption_records.push_back(std::move(*o.caption));
        if (o.record) result.records.push_back(std::move(*o.record));
        if (o.skip) result.skips.push_back(std::move(*o.skip));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Description prompts

DescriptionTemplates DescriptionTemplates::defaults() {
    DescriptionTemplates t;
    t.real =
        "This is an authentic photograph. Caption: {caption}. Explain, in two or three "
        "sentences, which visual properties (lighting consistency, natural textures, plausible "
        "geometry) support judging this image as real.";
    t.synthetic =
        "This image was generated entirely by a generative model. Caption: {caption}. Explain, "
        "in two or three sentences, which visual cues (texture statistics, implausible details, "
        "rendering artifacts) reveal that it is fully synthetic.";
    t.tampered =
        "This photograph was locally manipulated. Caption: {caption}. The edited region is "
        "marked by the mask at {mask}. Explain, in two or three sentences, which cues around "
        "the masked region (boundary artifacts, lighting mismatch, context inconsistency) "
        "reveal the manipulation.";
    return t;
}

DescriptionTemplates DescriptionTemplates::from_json(const nlohmann::json& j) {
    DescriptionTemplates t = defaults();
    if (j.contains("real")) t.real = j.at("real").get<std::string>();
    if (j.contains("synthetic")) t.synthetic = j.at("synthetic").get<std::string>();
    if (j.contains("tampered")) t.tampered = j.at("tampered").get<std::string>();
    return t;
}

namespace {

int count_occurrences(const std::string& text, const std::string& needle) {
    int n = 0;
    std::size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

std::string substitute_once(std::string text, const std::string& placeholder,
                            const std::string& value) {
    const std::size_t pos = text.find(placeholder);
    text.replace(pos, placeholder.size(), value);
    return text;
}

}  // namespace

std::string build_description_prompt(const DescriptionTemplates& templates, ImageKind kind,
                                     const DescriptionInputs& inputs) {
    const std::string* tpl = nullptr;
    switch (kind) {
        case ImageKind::real: tpl = &templates.real; break;
        case ImageKind::synthetic: tpl = &templates.synthetic; break;
        case ImageKind::tampered: tpl = &templates.tampered; break;
    }
    if (tpl == nullptr || tpl->empty()) {
        throw ConfigError("no description template configured for this image kind");
    }
    if (count_occurrences(*tpl, "{caption}") != 1) {
        throw ConfigError("description template must contain {caption} exactly once");
    }
    std::string prompt = substitute_once(*tpl, "{caption}", inputs.caption);
    if (kind == ImageKind::tampered) {
        if (!inputs.mask_ref) {
            throw ConfigError("tampered description prompt requires a mask reference");
        }
        if (count_occurrences(prompt, "{mask}") != 1) {
            throw ConfigError("tampered template must contain {mask} exactly once");
        }
        prompt = substitute_once(prompt, "{mask}", *inputs.mask_ref);
    }
    return prompt;
}

}  // namespace sida
