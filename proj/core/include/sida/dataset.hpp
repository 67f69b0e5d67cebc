#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sida/model.hpp"
#include "sida/trainer.hpp"

#include <json.hpp>

namespace sida {

// One manifest line. Unknown fields survive load/save verbatim.
struct ManifestEntry {
    std::string path;
    Label label = Label::real;
    std::optional<std::string> mask_path;
    std::string caption;
    std::optional<std::string> description;
    nlohmann::ordered_json extras = nlohmann::ordered_json::object();

    nlohmann::ordered_json to_json() const;
};

struct ManifestError : std::runtime_error {
    ManifestError(int line, const std::string& field, const std::string& msg)
        : std::runtime_error("manifest line " + std::to_string(line) + ", field '" + field +
                             "': " + msg),
          line(line),
          field(field) {}
    int line;
    std::string field;
};

// JSON-lines manifest, one entry per line, order preserved.
std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

enum class SplitPart { train = 0, val = 1, test = 2 };
const char* split_part_name(SplitPart p);

struct SplitAssignment {
    std::map<std::string, SplitPart> parts;  // entry path -> part

    SplitPart at(const std::string& id) const;
    std::array<int, 3> tally() const;
};

// Deterministic stratified 7:1:2 split. Entries are ranked by a stable hash
// of (id, seed) within each label class and cut at the rounded quotas, so
// per-class proportions are within one entry of 7:1:2 for any class size.
SplitAssignment split(const std::vector<ManifestEntry>& entries, std::uint64_t seed);

// Loads the image and, for tampered entries, the mask; validates that mask
// dimensions match the image and that mask pixels are strictly {0, 255}.
void validate_entry(const ManifestEntry& entry, const std::string& base_dir = "");

// Materialize an entry for training/eval. Paths are resolved against
// base_dir when relative.
Sample load_sample(const ManifestEntry& entry, const std::string& base_dir = "");

std::string resolve_path(const std::string& base_dir, const std::string& path);

}  // namespace sida
