#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sida/clients.hpp"
#include "sida/rng.hpp"

#include <json.hpp>

namespace sida {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Stage-1 output: one line of the Image-Caption-Object file.
struct CaptionRecord {
    std::string image_id;
    std::string caption;
    std::vector<std::string> objects;

    nlohmann::ordered_json to_json() const;
    static CaptionRecord from_json(const nlohmann::json& j);
};

void save_caption_records(const std::vector<CaptionRecord>& records, const std::string& path);
std::vector<CaptionRecord> load_caption_records(const std::string& path);

// Replacement directories for full (object) and partial (attribute) edits.
struct ReplacementDicts {
    std::map<std::string, std::vector<std::string>> object_map;
    std::map<std::string, std::vector<std::string>> attribute_map;

    void validate() const;  // no self-replacement, candidate lists non-empty
    static ReplacementDicts builtin();
    static ReplacementDicts from_json(const nlohmann::json& j);
    static ReplacementDicts load(const std::string& path);
    nlohmann::ordered_json to_json() const;
};

enum class TamperMode { object, attribute };
const char* tamper_mode_name(TamperMode m);

// Provenance of one generated tampered image through the four stages.
struct TamperRecord {
    std::string image_id;
    TamperMode mode = TamperMode::object;
    std::string target_object;
    std::string edit;
    std::string edited_caption;
    std::string mask_path;
    std::string output_path;

    nlohmann::ordered_json to_json() const;  // schema_version 1
    static TamperRecord from_json(const nlohmann::json& j);
};

void save_tamper_records(const std::vector<TamperRecord>& records, const std::string& path);
std::vector<TamperRecord> load_tamper_records(const std::string& path);

// The default 80-class object list.
const std::vector<std::string>& coco_classes();

// Stage 1: extractor output filtered to the class list; falls back to
// rule-based token matching against the class list, then to retained nouns
// via a stoplist heuristic (never empty for a non-empty caption).
CaptionRecord stage1_extract(const std::string& image_id, const std::string& caption,
                             const std::vector<std::string>& class_list, ObjectExtractor& extractor);

// Rule-based helpers behind the stage-1 fallback.
std::vector<std::string> match_classes(const std::string& caption,
                                       const std::vector<std::string>& class_list);
std::vector<std::string> retain_nouns(const std::string& caption);

// Stage 2: ground-truth mask for the phrase. nullopt when the segmenter
// yields an empty mask (the record is then skipped with a logged reason);
// a dimension mismatch from the backend is a client error.
std::optional<ImageU8> stage2_mask(const ImageU8& image, const std::string& phrase,
                                   Segmenter& segmenter);

// Stage 3 result before inpainting.
struct TamperDraft {
    std::string image_id;
    TamperMode mode = TamperMode::object;
    std::string target_object;
    std::string edit;
    std::string edited_caption;
    std::string instruction;
};

// Draws the edit for one record; nullopt means the record is skipped (the
// object is in neither dictionary, or the phrase cannot be located in the
// caption). The caption edit is an exact-phrase substitution for object
// mode, or attribute insertion before the noun's first occurrence.
std::optional<TamperDraft> stage3_select(const CaptionRecord& record,
                                         const ReplacementDicts& dicts, Rng& rng,
                                         double object_ratio);

// Stage 4: regenerate the masked region, retrying transient backend
// failures up to `retries` extra attempts. nullopt when all attempts fail;
// the last error message lands in *error when given.
std::optional<ImageU8> stage4_inpaint(const TamperDraft& draft, const ImageU8& image,
                                      const ImageU8& mask, Inpainter& inpainter, int retries,
                                      std::string* error = nullptr);

struct PipelineInput {
    std::string image_id;
    std::string caption;
    std::optional<std::string> image_path;  // synthesized placeholder when absent
};

struct SkipLog {
    std::string image_id;
    std::string stage;
    std::string reason;
};

struct PipelineConfig {
    std::vector<std::string> class_list = coco_classes();
    ReplacementDicts dicts = ReplacementDicts::builtin();
    double object_ratio = 0.8;  // 4:1 object:attribute
    std::uint64_t seed = 0;
    int inpaint_retries = 2;
    int parallelism = 1;
    std::string out_dir;        // masks/ and images/ are created inside
    int placeholder_size = 64;  // synthesized source image side
};

struct PipelineResult {
    std::vector<CaptionRecord> caption_records;
    std::vector<TamperRecord> records;
    std::vector<SkipLog> skips;
};

// The full four-stage pipeline. Every input yields exactly one TamperRecord
// or one logged skip. Per-record randomness derives from (seed, image_id),
// so results are identical at any parallelism level.
PipelineResult run_pipeline(const std::vector<PipelineInput>& inputs, ObjectExtractor& extractor,
                            Segmenter& segmenter, Inpainter& inpainter,
                            const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Description prompt templating

enum class ImageKind { real, synthetic, tampered };

struct DescriptionTemplates {
    std::string real;
    std::string synthetic;
    std::string tampered;

    static DescriptionTemplates defaults();
    static DescriptionTemplates from_json(const nlohmann::json& j);
};

struct DescriptionInputs {
    std::string caption;
    std::optional<std::string> mask_ref;  // required for tampered
};

// Fills the kind's template; {caption} must appear exactly once, and the
// tampered template additionally takes {mask}.
std::string build_description_prompt(const DescriptionTemplates& templates, ImageKind kind,
                                     const DescriptionInputs& inputs);

}  // namespace sida
