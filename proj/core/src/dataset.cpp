#include "sida/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sida/image.hpp"

namespace sida {

namespace {

const char* kKnownFields[] = {"path", "label", "mask_path", "caption", "description"};

bool is_known_field(const std::string& key) {
    for (const char* f : kKnownFields) {
        if (key == f) return true;
    }
    return false;
}

}  // namespace

nlohmann::ordered_json ManifestEntry::to_json() const {
    nlohmann::ordered_json j;
    j["path"] = path;
    j["label"] = label_name(label);
    if (mask_path) j["mask_path"] = *mask_path;
    j["caption"] = caption;
    if (description) j["description"] = *description;
    for (auto& [k, v] : extras.items()) j[k] = v;
    return j;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ManifestError(line_no, "-", std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) throw ManifestError(line_no, "-", "entry must be a JSON object");
        ManifestEntry e;
        if (!j.contains("path") || !j["path"].is_string()) {
            throw ManifestError(line_no, "path", "missing or non-string");
        }
        e.path = j["path"].get<std::string>();
        if (!j.contains("label") || !j["label"].is_string()) {
            throw ManifestError(line_no, "label", "missing or non-string");
        }
        try {
            e.label = label_from_name(j["label"].get<std::string>());
        } catch (const std::exception& ex) {
            throw ManifestError(line_no, "label", ex.what());
        }
        if (j.contains("mask_path")) {
            if (!j["mask_path"].is_string()) throw ManifestError(line_no, "mask_path", "non-string");
            e.mask_path = j["mask_path"].get<std::string>();
        }
        if (!j.contains("caption") || !j["caption"].is_string()) {
            throw ManifestError(line_no, "caption", "missing or non-string");
        }
        e.caption = j["caption"].get<std::string>();
        if (j.contains("description")) {
            if (!j["description"].is_string()) {
                throw ManifestError(line_no, "description", "non-string");
            }
            e.description = j["description"].get<std::string>();
        }
        // Label/mask coupling: tampered iff mask present.
        if ((e.label == Label::tampered) != e.mask_path.has_value()) {
            throw ManifestError(line_no, "mask_path",
                                e.label == Label::tampered
                                    ? "tampered entry requires mask_path"
                                    : "mask_path only allowed on tampered entries");
        }
        for (auto& [k, v] : j.items()) {
            if (!is_known_field(k)) e.extras[k] = v;
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& e : entries) out << e.to_json().dump() << "\n";
    if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Split

const char* split_part_name(SplitPart p) {
    switch (p) {
        case SplitPart::train: return "train";
        case SplitPart::val: return "val";
        case SplitPart::test: return "test";
    }
    throw std::invalid_argument("bad split part");
}

SplitPart SplitAssignment::at(const std::string& id) const {
    auto it = parts.find(id);
    if (it == parts.end()) throw std::out_of_range("no split assignment for '" + id + "'");
    return it->second;
}

std::array<int, 3> SplitAssignment::tally() const {
    std::array<int, 3> t{0, 0, 0};
    for (const auto& [_, p] : parts) ++t[static_cast<int>(p)];
    return t;
}

SplitAssignment split(const std::vector<ManifestEntry>& entries, std::uint64_t seed) {
    if (entries.empty()) throw std::invalid_argument("split: empty manifest");
    SplitAssignment out;
    // Per label class: rank by hash(id, seed) and cut at rounded 70%/80%.
    for (int cls = 0; cls < 3; ++cls) {
        std::vector<std::pair<double, const std::string*>> ranked;
        for (const auto& e : entries) {
            if (static_cast<int>(e.label) != cls) continue;
            ranked.emplace_back(hash_unit(e.path, seed), &e.path);
        }
        if (ranked.empty()) continue;
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return *a.second < *b.second;
        });
        const std::size_t n = ranked.size();
        const std::size_t n_train = static_cast<std::size_t>(std::llround(0.7 * n));
        const std::size_t n_train_val = static_cast<std::size_t>(std::llround(0.8 * n));
        for (std::size_t i = 0; i < n; ++i) {
            SplitPart p = i < n_train ? SplitPart::train
                                      : (i < n_train_val ? SplitPart::val : SplitPart::test);
            out.parts[*ranked[i].second] = p;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loading

std::string resolve_path(const std::string& base_dir, const std::string& path) {
    if (base_dir.empty() || path.empty() || path[0] == '/') return path;
    return base_dir + "/" + path;
}

void validate_entry(const ManifestEntry& entry, const std::string& base_dir) {
    ImageU8 img = load_image_u8(resolve_path(base_dir, entry.path));
    if (entry.mask_path) {
        ImageU8 mask = load_image_u8(resolve_path(base_dir, *entry.mask_path));
        if (mask.channels != 1) {
            throw std::runtime_error(*entry.mask_path + ": mask must be 8-bit grayscale");
        }
        if (mask.height != img.height || mask.width != img.width) {
            throw std::runtime_error(*entry.mask_path + ": mask " + std::to_string(mask.height) +
                                     "x" + std::to_string(mask.width) + " does not match image " +
                                     std::to_string(img.height) + "x" + std::to_string(img.width));
        }
        for (std::uint8_t v : mask.pixels) {
            if (v != 0 && v != 255) {
                throw std::runtime_error(*entry.mask_path + ": mask pixels must be 0 or 255");
            }
        }
    }
}

Sample load_sample(const ManifestEntry& entry, const std::string& base_dir) {
    Sample s;
    s.id = entry.path;
    s.image = load_image(resolve_path(base_dir, entry.path));
    s.label = entry.label;
    if (entry.mask_path) s.mask = load_mask(resolve_path(base_dir, *entry.mask_path));
    s.description = entry.description;
    return s;
}

}  // namespace sida
